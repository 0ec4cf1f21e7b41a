"""Tabular data layer: typed columns, design-matrix encoding, folds and
bootstrap draws. Every model in the toolkit consumes the numeric design
produced here."""

import csv
from dataclasses import dataclass, field

import numpy as np


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # 'numeric' | 'categorical'
    values: np.ndarray = None  # float array when numeric
    levels: tuple = None  # ordered level labels when categorical
    codes: np.ndarray = None  # int index into levels

    def __len__(self):
        return len(self.values) if self.kind == "numeric" else len(self.codes)


@dataclass(frozen=True)
class Dataset:
    """Immutable table of typed columns, all of length ``n_rows``."""

    name: str
    columns: tuple
    n_rows: int

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names")
        for c in self.columns:
            if len(c) != self.n_rows:
                raise ValueError(f"column '{c.name}' has length {len(c)}, expected {self.n_rows}")
        if self.n_rows <= 0:
            raise ValueError("dataset has no rows")

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(f"no column named '{name}'")

    def column_names(self):
        return [c.name for c in self.columns]

    def __contains__(self, name):
        return any(c.name == name for c in self.columns)

    def replace(self, *cols):
        """Return a new Dataset with the given columns replacing same-named ones
        (appended when the name is new)."""
        by_name = {c.name: c for c in cols}
        out = [by_name.pop(c.name, c) for c in self.columns]
        out.extend(by_name.values())
        return Dataset(self.name, tuple(out), self.n_rows)

    def drop(self, name):
        self.column(name)  # existence check
        return Dataset(self.name, tuple(c for c in self.columns if c.name != name), self.n_rows)


def numeric_column(name, values):
    return Column(name, "numeric", values=_frozen(np.asarray(values, dtype=float)))


def categorical_column(name, values, levels=None):
    """Build a categorical column; levels default to first-appearance order."""
    values = [str(v) for v in values]
    if levels is None:
        levels = list(dict.fromkeys(values))
    index = {lvl: i for i, lvl in enumerate(levels)}
    try:
        codes = np.array([index[v] for v in values], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"column '{name}': value {e} not in declared levels") from None
    return Column(name, "categorical", levels=tuple(levels), codes=_frozen(codes))


def read_schema(path):
    """Parse a schema override file of `column=numeric|categorical` lines."""
    schema = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"schema line {lineno}: expected column=kind, got '{line}'")
            col, kind = (part.strip() for part in line.split("=", 1))
            if kind not in ("numeric", "categorical"):
                raise ValueError(f"schema line {lineno}: unknown kind '{kind}'")
            schema[col] = kind
    return schema


def load_csv(path, schema=None, name=None):
    """Load a rectangular CSV with header into a Dataset.

    Columns whose every value parses as a float become numeric; anything else
    becomes categorical with levels in first-appearance order. ``schema`` maps
    column names to 'numeric'/'categorical' to override the inference, and may
    be a dict or the path of a `column=kind` override file.

    Missing entries are rejected: the paper-scale datasets are complete and
    imputation is out of scope.
    """
    if schema is not None and not isinstance(schema, dict):
        schema = read_schema(schema)
    schema = schema or {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row at line {lineno} has {len(row)} fields, expected {len(header)}")
            rows.append([v.strip() for v in row])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    unknown = set(schema) - set(header)
    if unknown:
        raise ValueError(f"schema names unknown columns: {sorted(unknown)}")

    columns = []
    for j, col_name in enumerate(header):
        raw = [r[j] for r in rows]
        for i, v in enumerate(raw):
            if v == "":
                raise ValueError(f"{path}: missing value in column '{col_name}' at line {i + 2}")
        kind = schema.get(col_name)
        if kind != "categorical":
            try:
                as_float = [float(v) for v in raw]
            except ValueError:
                if kind == "numeric":
                    raise ValueError(f"{path}: column '{col_name}' declared numeric but has non-numeric values")
                as_float = None
        else:
            as_float = None
        if as_float is not None:
            columns.append(numeric_column(col_name, as_float))
        else:
            columns.append(categorical_column(col_name, raw))
    ds_name = name if name is not None else str(path)
    return Dataset(ds_name, tuple(columns), len(rows))


# ---------------------------------------------------------------------------
# dataset-level derivations used by the experiment configs


def log_column(ds, name):
    col = ds.column(name)
    if col.kind != "numeric":
        raise ValueError(f"log: column '{name}' is not numeric")
    if np.any(col.values <= 0):
        raise ValueError(f"log: column '{name}' has non-positive values")
    return ds.replace(numeric_column(name, np.log(col.values)))


def binarize(ds, new_name, source, threshold):
    col = ds.column(source)
    if col.kind != "numeric":
        raise ValueError(f"binarize: column '{source}' is not numeric")
    return ds.replace(numeric_column(new_name, (col.values > threshold).astype(float)))


def _bin_label(lo, hi):
    def fmt(x):
        if np.isposinf(x):
            return "Inf"
        if np.isneginf(x):
            return "-Inf"
        return format(x, ".3g")

    return f"({fmt(lo)},{fmt(hi)}]"


def bin_column(ds, name, breaks):
    """Replace a numeric column by its interval factor over (b0,b1], (b1,b2], ...

    Labels follow the usual statistical-software spelling, e.g. breaks
    (0, 4000, inf) give levels  (0,4e+03]  and  (4e+03,Inf].
    """
    col = ds.column(name)
    if col.kind != "numeric":
        raise ValueError(f"bin: column '{name}' is not numeric")
    breaks = np.asarray(breaks, dtype=float)
    if len(breaks) < 2 or np.any(np.diff(breaks) <= 0):
        raise ValueError("bin: breaks must be strictly increasing with at least 2 entries")
    v = col.values
    if np.any(v <= breaks[0]) or np.any(v > breaks[-1]):
        raise ValueError(f"bin: values of '{name}' outside ({breaks[0]}, {breaks[-1]}]")
    labels = [_bin_label(breaks[i], breaks[i + 1]) for i in range(len(breaks) - 1)]
    idx = np.searchsorted(breaks, v, side="left") - 1
    return ds.replace(categorical_column(name, [labels[i] for i in idx], levels=labels))


def sort_levels(ds, names="*"):
    """Reorder categorical levels lexicographically (so the reference level under
    dummy coding is the smallest label, matching conventional factor coding)."""
    if names == "*":
        names = [c.name for c in ds.columns if c.kind == "categorical"]
    new_cols = []
    for name in names:
        col = ds.column(name)
        if col.kind != "categorical":
            raise ValueError(f"sort_levels: column '{name}' is not categorical")
        order = sorted(col.levels)
        remap = np.array([order.index(lvl) for lvl in col.levels])
        new_cols.append(Column(name, "categorical", levels=tuple(order), codes=_frozen(remap[col.codes])))
    return ds.replace(*new_cols)


# ---------------------------------------------------------------------------
# design matrix


@dataclass(frozen=True)
class Scaling:
    mean: np.ndarray
    scale: np.ndarray


@dataclass(frozen=True)
class DesignMatrix:
    """Encoded numeric design: x is n rows by p columns, y the response.

    Classification responses are stored as 0/1; `y_pm` exposes the same vector
    recoded to -1/+1 for margin-based losses.
    """

    x: np.ndarray
    y: np.ndarray
    column_names: tuple
    has_intercept: bool
    encoding_map: dict = field(default_factory=dict)
    response_name: str = "y"
    scaling: Scaling = None

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=float)))
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ValueError("design/response shapes disagree")
        if len(self.column_names) != self.x.shape[1]:
            raise ValueError("column_names length disagrees with design width")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("design contains non-finite entries")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def y_pm(self):
        return _frozen(2.0 * self.y - 1.0)

    def column_index(self, name):
        try:
            return self.column_names.index(name)
        except ValueError:
            raise KeyError(f"no design column named '{name}'") from None

    def subset(self, rows):
        return DesignMatrix(self.x[rows], self.y[rows], self.column_names, self.has_intercept,
                            self.encoding_map, self.response_name)

    def select_columns(self, names):
        """Design restricted to the named columns (order preserved as given)."""
        idx = [self.column_index(nm) for nm in names]
        has_int = self.has_intercept and any(self.column_names[i] == "intercept" for i in idx)
        return DesignMatrix(self.x[:, idx], self.y, tuple(names), has_int,
                            self.encoding_map, self.response_name)

    def features(self):
        """Non-intercept block and its names, for learners with their own bias."""
        if not self.has_intercept:
            return self.x, self.column_names
        keep = [j for j, nm in enumerate(self.column_names) if nm != "intercept"]
        return self.x[:, keep], tuple(self.column_names[j] for j in keep)

    def standardized(self):
        """Center and scale non-intercept columns (population sd; centering only
        when an intercept is present, root-mean-square scale otherwise)."""
        x = np.array(self.x)
        mean = np.zeros(self.p)
        scale = np.ones(self.p)
        for j, nm in enumerate(self.column_names):
            if self.has_intercept and nm == "intercept":
                continue
            if self.has_intercept:
                mean[j] = x[:, j].mean()
                s = x[:, j].std()
            else:
                s = np.sqrt(np.mean(x[:, j] ** 2))
            scale[j] = s if s > 1e-12 else 1.0
            x[:, j] = (x[:, j] - mean[j]) / scale[j]
        return DesignMatrix(x, self.y, self.column_names, self.has_intercept,
                            self.encoding_map, self.response_name,
                            Scaling(_frozen(mean), _frozen(scale)))

    def destandardize_beta(self, beta):
        """Map coefficients fit on the standardized design back to this design's
        original scale (intercept absorbs the centering shifts)."""
        if self.scaling is None:
            raise ValueError("design carries no standardization metadata")
        beta = np.asarray(beta, dtype=float)
        out = beta / self.scaling.scale
        if self.has_intercept:
            i0 = self.column_index("intercept")
            shift = np.sum(out * self.scaling.mean)
            out = out.copy()
            out[i0] = beta[i0] - shift
        return out


def _parse_term(term):
    term = term.strip()
    if term.startswith("square(") and term.endswith(")"):
        return ("square", term[7:-1].strip())
    if term.startswith("hinge(") and term.endswith(")"):
        inner = term[6:-1]
        col, knot = inner.rsplit(",", 1)
        return ("hinge", col.strip(), float(knot))
    if ":" in term:
        a, b = term.split(":", 1)
        return ("interaction", a.strip(), b.strip())
    return ("plain", term)


def _expand_plain(ds, name):
    col = ds.column(name)
    if col.kind == "numeric":
        return [(name, col.values)]
    out = []
    for i, lvl in enumerate(col.levels):
        if i == 0:
            continue  # reference level
        out.append((f"{name}{lvl}", (col.codes == i).astype(float)))
    return out


def encode(ds, response, formula, intercept=True, positive=None):
    """Encode a Dataset into a DesignMatrix.

    Parameters
    ----------
    ds : Dataset
    response : str
        Response column. Numeric values pass through; a two-level categorical
        becomes 0/1 with ``positive`` naming the level coded 1 (defaults to the
        second level).
    formula : sequence of str
        Terms: plain column names (categoricals expand to level dummies against
        the first level), ``square(a)``, ``hinge(a, c)`` for max(a-c, 0), and
        interactions ``a:b`` (products of the already-encoded columns of each
        side).
    intercept : bool
        Prepend a constant column unless disabled.
    """
    y_col = ds.column(response)
    if y_col.kind == "numeric":
        y = y_col.values
    else:
        if len(y_col.levels) != 2:
            raise ValueError(f"response '{response}' must have 2 levels, has {len(y_col.levels)}")
        pos = positive if positive is not None else y_col.levels[1]
        if pos not in y_col.levels:
            raise ValueError(f"positive level '{pos}' not among {y_col.levels}")
        y = (y_col.codes == y_col.levels.index(pos)).astype(float)

    names, cols = [], []
    encoding_map = {}
    if intercept:
        names.append("intercept")
        cols.append(np.ones(ds.n_rows))
    for term in formula:
        parsed = _parse_term(term)
        kind = parsed[0]
        if kind == "plain":
            if parsed[1] == response:
                raise ValueError("response cannot appear in the formula")
            expanded = _expand_plain(ds, parsed[1])
            col = ds.column(parsed[1])
            if col.kind == "categorical":
                encoding_map[parsed[1]] = {"reference": col.levels[0],
                                           "dummies": [nm for nm, _ in expanded],
                                           "levels": col.levels}
            for nm, v in expanded:
                names.append(nm)
                cols.append(v)
        elif kind == "square":
            col = ds.column(parsed[1])
            if col.kind != "numeric":
                raise ValueError(f"square: column '{parsed[1]}' is not numeric")
            names.append(f"square({parsed[1]})")
            cols.append(col.values ** 2)
        elif kind == "hinge":
            col = ds.column(parsed[1])
            if col.kind != "numeric":
                raise ValueError(f"hinge: column '{parsed[1]}' is not numeric")
            knot = parsed[2]
            names.append(f"hinge({parsed[1]},{format(knot, 'g')})")
            cols.append(np.maximum(col.values - knot, 0.0))
        elif kind == "interaction":
            a, b = parsed[1], parsed[2]
            if response in (a, b):
                raise ValueError("interaction with the response is not allowed")
            for na, va in _expand_plain(ds, a):
                for nb, vb in _expand_plain(ds, b):
                    names.append(f"{na}:{nb}")
                    cols.append(va * vb)
    if len(set(names)) != len(names):
        dup = sorted({nm for nm in names if names.count(nm) > 1})
        raise ValueError(f"formula produces duplicate design columns: {dup}")
    x = np.column_stack(cols) if cols else np.empty((ds.n_rows, 0))
    return DesignMatrix(x, y, tuple(names), intercept, encoding_map, response)


def decode_categorical(dm, ds, name):
    """Recover the original level label of `name` on every row from the dummy
    block recorded in the encoding map (round-trip check support)."""
    info = dm.encoding_map[name]
    n = dm.n
    labels = np.array([info["reference"]] * n, dtype=object)
    for dummy in info["dummies"]:
        j = dm.column_index(dummy)
        lvl = dummy[len(name):]
        labels[dm.x[:, j] == 1.0] = lvl
    return list(labels)


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: np.ndarray  # fold ids in 1..k
    seed: int

    def rows(self, j):
        return np.nonzero(self.assignment == j)[0]

    def train_rows(self, j):
        return np.nonzero(self.assignment != j)[0]


@dataclass(frozen=True)
class BootstrapSample:
    in_bag: np.ndarray  # n draws with replacement
    out_of_bag: np.ndarray
    seed: object


def make_folds(n, k, seed, labels=None):
    """Balanced random fold assignment, deterministic in the seed.

    With ``labels``, rows are dealt class by class so every fold sees each
    class in near-identical proportion (stratified variant); global fold sizes
    still differ by at most one.
    """
    if not 2 <= k <= n:
        raise ValueError(f"k must satisfy 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    if labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(labels)
        if len(labels) != n:
            raise ValueError("labels length disagrees with n")
        parts = []
        for value in np.unique(labels):
            members = np.nonzero(labels == value)[0]
            parts.append(rng.permutation(members))
        order = np.concatenate(parts)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % k + 1
    return FoldPlan(k, _frozen(assignment), seed)


def bootstrap(n, seed):
    """Draw n rows with replacement; out_of_bag is the complement of the draw."""
    if n < 1:
        raise ValueError("bootstrap needs n >= 1")
    rng = np.random.default_rng(seed)
    in_bag = rng.integers(0, n, size=n)
    out_of_bag = np.setdiff1d(np.arange(n), in_bag)
    return BootstrapSample(_frozen(in_bag), _frozen(out_of_bag), seed)
