"""Feature and label files, sequence-length normalization, synthetic data.

File formats (text, period radix, one record per line):

* feature file: header ``MMSA-FEAT v1 <V|A|T> <dim>``, then per sample
  ``<id> <length> v_11 ... v_Ld`` with the values row-major.
* label file: header ``MMSA-LABEL v1``, then ``<id> <continuous> <class>``.

Values are written with 17 significant digits so loading reproduces the
written doubles exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ops import Rng, rand_normal

FEATURE_MAGIC = "MMSA-FEAT v1"
LABEL_MAGIC = "MMSA-LABEL v1"
MODALITIES = ("V", "A", "T")


@dataclass
class FeatureSequence:
    modality: str
    values: np.ndarray  # [length, dim]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class SampleRecord:
    id: str
    features: dict          # modality -> FeatureSequence (subset allowed)
    score: float            # continuous label
    label: int              # class label, 0..2


def resample_to_length(seq: FeatureSequence, t: int = 32) -> FeatureSequence:
    """Normalize a sequence to exactly ``t`` rows.

    Shorter sequences get all-zero rows appended at the end; longer ones
    keep the rows at indices floor(k * length / t) for k = 0..t-1. A
    sequence already at ``t`` comes back unchanged.
    """
    length = seq.length
    if length < 1:
        raise DataError("cannot resample an empty sequence")
    if length == t:
        return seq
    if length < t:
        pad = np.zeros((t - length, seq.dim))
        return FeatureSequence(seq.modality, np.vstack([seq.values, pad]))
    idx = [(k * length) // t for k in range(t)]
    return FeatureSequence(seq.modality, seq.values[idx].copy())


def _fmt(values) -> str:
    return " ".join(f"{x:.17g}" for x in values)


def write_feature_file(path, seqs: dict):
    """Write an id -> FeatureSequence mapping; all entries must share modality and dim."""
    if not seqs:
        raise ValueError("nothing to write")
    first = next(iter(seqs.values()))
    modality, dim = first.modality, first.dim
    lines = [f"{FEATURE_MAGIC} {modality} {dim}"]
    for sid, seq in seqs.items():
        if seq.modality != modality or seq.dim != dim:
            raise ValueError(f"sample {sid} does not match header ({modality}, dim {dim})")
        lines.append(f"{sid} {seq.length} {_fmt(seq.values.reshape(-1))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_feature_file(path):
    """Read a feature file; returns (modality, dim, ordered id -> FeatureSequence)."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 4 or " ".join(header[:2]) != FEATURE_MAGIC:
        raise DataError(f"{path}:1: bad header, expected '{FEATURE_MAGIC} <V|A|T> <dim>'")
    modality = header[2]
    if modality not in MODALITIES:
        raise DataError(f"{path}:1: bad header, unknown modality {modality!r}")
    try:
        dim = int(header[3])
    except ValueError as exc:
        raise DataError(f"{path}:1: bad header, dim is not an integer") from exc
    if dim < 1:
        raise DataError(f"{path}:1: bad header, dim must be positive")
    seqs = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: malformed line")
        sid = parts[0]
        if sid in seqs:
            raise DataError(f"{path}:{lineno}: duplicate id {sid}")
        try:
            length = int(parts[1])
            values = np.array([float(x) for x in parts[2:]])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed line") from exc
        if length < 1 or values.size != length * dim:
            raise DataError(
                f"{path}:{lineno}: malformed line, expected {length}x{dim} values, "
                f"got {values.size}"
            )
        if not np.isfinite(values).all():
            raise DataError(f"{path}:{lineno}: malformed line, non-finite value")
        seqs[sid] = FeatureSequence(modality, values.reshape(length, dim))
    return modality, dim, seqs


def write_labels(path, rows: dict):
    """Write an id -> (continuous, class) mapping."""
    lines = [LABEL_MAGIC]
    for sid, (score, label) in rows.items():
        lines.append(f"{sid} {score:.17g} {label}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_labels(path) -> dict:
    """Read a label file into an ordered id -> (continuous, class) mapping."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read label file {path}: {exc}") from exc
    if not lines or lines[0] != LABEL_MAGIC:
        raise DataError(f"{path}:1: bad header, expected {LABEL_MAGIC!r}")
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: malformed line")
        sid = parts[0]
        if sid in out:
            raise DataError(f"{path}:{lineno}: duplicate id {sid}")
        try:
            score = float(parts[1])
            label = int(parts[2])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed line") from exc
        if not np.isfinite(score) or not 0 <= label <= 2:
            raise DataError(f"{path}:{lineno}: malformed line, label out of range")
        out[sid] = (score, label)
    return out


def synth_signatures(seed: int, dims=(16, 12, 20)) -> dict:
    """Per-modality class signatures: unit-norm vectors, one per class."""
    rng = Rng(seed)
    sigs = {}
    for m, dim in zip(MODALITIES, dims):
        rows = rand_normal(rng, (3, dim))
        sigs[m] = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    return sigs


def synth_dataset(seed: int, n_per_class: int, dims=(16, 12, 20), t_range=(8, 48),
                  noise: float = 0.5, embed_all: bool = False):
    """Three-class synthetic corpus standing in for real data at desk scale.

    Every sample is white noise in all modalities, with the class signature
    added to every row of two randomly chosen modalities (all three with
    ``embed_all``), so no single modality carries the class on its own and
    fusion has something real to gain. The continuous label is c - 1 plus
    uniform jitter in (-0.2, 0.2). Returns a seeded 80/20 train/test split.
    """
    if n_per_class < 1:
        raise ValueError("need at least one sample per class")
    sigs = synth_signatures(seed, dims)
    rng = Rng(seed + 1)
    records = []
    idx = 0
    for c in range(3):
        for _ in range(n_per_class):
            length = rng.randint(t_range[0], t_range[1])
            if embed_all:
                chosen = set(MODALITIES)
            else:
                excluded = MODALITIES[rng.randint(0, 2)]
                chosen = set(MODALITIES) - {excluded}
            features = {}
            for m, dim in zip(MODALITIES, dims):
                values = rand_normal(rng, (length, dim), sigma=noise)
                if m in chosen:
                    values += sigs[m][c]
                features[m] = FeatureSequence(m, values)
            score = (c - 1) + (rng.uniform() * 0.4 - 0.2)
            records.append(SampleRecord(f"s{idx:04d}", features, score, c))
            idx += 1
    rng.shuffle(records)
    n_train = (len(records) * 4) // 5
    return records[:n_train], records[n_train:]


def prepare_samples(records, config):
    """Turn SampleRecords into (inputs, label) pairs ready for the model.

    Resamples every needed modality to the configured sequence length and
    picks the class or continuous label depending on the head mode.
    """
    prepared = []
    for rec in records:
        inputs = {}
        for m in config.modalities:
            seq = rec.features.get(m)
            if seq is None:
                raise DataError(f"sample {rec.id} has no features for modality {m}")
            inputs[m] = resample_to_length(seq, config.seq_len).values
        label = rec.label if config.head == "classify3" else rec.score
        prepared.append((inputs, label))
    return prepared
