"""Networks, properties, and their reduction to an equality tableau.

A verification query is the pair (network, property).  ``encode_query``
lowers it to the tableau form the rest of the package operates on: a
homogeneous equation system ``A . V = 0`` together with box bounds
``l <= V <= u`` and a list of ReLU triples (b, f, a) where ``f = max(b, 0)``
and ``a = f - b``.

Variable ordering is fixed and documented so that serialized proofs are
portable: network inputs first, then per hidden layer a (b, f, a) triple per
neuron (b only for identity neurons), then outputs, then slack variables for
multi-term output constraints, then a constant-one variable if any bias or
offset requires it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

__all__ = [
    "RELU",
    "IDENTITY",
    "Layer",
    "Network",
    "LinearConstraint",
    "Property",
    "Variable",
    "TableauQuery",
    "EncodingError",
    "encode_query",
    "evaluate_network",
]

RELU = "relu"
IDENTITY = "identity"

_ZERO = Fraction(0)
_ONE = Fraction(1)


class EncodingError(ValueError):
    """Raised when a (network, property) pair cannot be encoded."""


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"expected exact rational, got {type(x).__name__}")


@dataclass(frozen=True)
class Layer:
    """One network layer.

    The input layer has ``weights is None``; every other layer carries a
    ``size x previous_size`` weight matrix and a bias per neuron.
    """

    size: int
    weights: tuple[tuple[Fraction, ...], ...] | None = None
    biases: tuple[Fraction, ...] | None = None
    activation: str = RELU

    @staticmethod
    def input_layer(size: int) -> "Layer":
        return Layer(size=size, weights=None, biases=None, activation=IDENTITY)

    @staticmethod
    def dense(weights: Sequence[Sequence], biases: Sequence | None = None,
              activation: str = RELU) -> "Layer":
        w = tuple(tuple(_as_fraction(v) for v in row) for row in weights)
        if biases is None:
            b = tuple(_ZERO for _ in w)
        else:
            b = tuple(_as_fraction(v) for v in biases)
        return Layer(size=len(w), weights=w, biases=b, activation=activation)


@dataclass(frozen=True)
class Network:
    """A feed-forward network: input layer, hidden layers, identity output."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        if len(self.layers) < 2:
            raise EncodingError("network needs an input and an output layer")
        first = self.layers[0]
        if first.weights is not None:
            raise EncodingError("input layer must not carry weights")
        for i, layer in enumerate(self.layers[1:], start=1):
            if layer.weights is None or layer.biases is None:
                raise EncodingError(f"layer {i} is missing weights or biases")
            if len(layer.weights) != layer.size or len(layer.biases) != layer.size:
                raise EncodingError(f"layer {i} size disagrees with its weights")
            prev = self.layers[i - 1].size
            for row in layer.weights:
                if len(row) != prev:
                    raise EncodingError(
                        f"layer {i} weight row has {len(row)} entries, expected {prev}")
        if self.layers[-1].activation != IDENTITY:
            raise EncodingError("output layer activation must be identity")

    @property
    def input_size(self) -> int:
        return self.layers[0].size

    @property
    def output_size(self) -> int:
        return self.layers[-1].size

    def relu_count(self) -> int:
        return sum(l.size for l in self.layers[1:-1] if l.activation == RELU)


@dataclass(frozen=True)
class LinearConstraint:
    """An output constraint ``sum(coeffs[j] * y_j) <= bound``."""

    coeffs: tuple[Fraction, ...]
    bound: Fraction

    @staticmethod
    def of(coeffs: Sequence, bound) -> "LinearConstraint":
        return LinearConstraint(tuple(_as_fraction(c) for c in coeffs),
                                _as_fraction(bound))

    def term_count(self) -> int:
        return sum(1 for c in self.coeffs if c != 0)


@dataclass(frozen=True)
class Property:
    """Input box, conjunctive output constraints, optional bound assumptions.

    An input bound of ``None`` means unbounded; ``encode_query`` rejects such
    inputs (every input must have finite bounds).

    ``assumed_bounds`` maps variable names (see the tableau naming scheme) to
    (lower, upper) pairs that replace the encoder's derived initial bounds.
    They are assumptions: the query they produce is only equivalent to the
    plain one when each assumed interval contains the variable's reachable
    range.  Verdicts are always relative to the encoded query.
    """

    input_bounds: tuple[tuple[Fraction | None, Fraction | None], ...]
    output_constraints: tuple[LinearConstraint, ...] = ()
    assumed_bounds: Mapping[str, tuple[Fraction, Fraction]] = field(default_factory=dict)

    def __post_init__(self):
        for lo, hi in self.input_bounds:
            if lo is not None and hi is not None and lo > hi:
                raise EncodingError(f"input interval [{lo}, {hi}] is empty")

    @staticmethod
    def box(bounds: Iterable[tuple], constraints: Iterable[LinearConstraint] = (),
            assumed: Mapping[str, tuple] | None = None) -> "Property":
        ib = tuple(
            (None if lo is None else _as_fraction(lo),
             None if hi is None else _as_fraction(hi))
            for lo, hi in bounds)
        assumed_frac = {}
        if assumed:
            for name, (lo, hi) in assumed.items():
                assumed_frac[name] = (_as_fraction(lo), _as_fraction(hi))
        return Property(ib, tuple(constraints), assumed_frac)


# Variable kind tags.
KIND_INPUT = "x"
KIND_PRE = "b"
KIND_POST = "f"
KIND_AUX = "a"
KIND_OUTPUT = "y"
KIND_SLACK = "s"
KIND_CONST = "one"


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str


@dataclass(frozen=True)
class TableauQuery:
    """The tableau form: variables, A, bounds, and the ReLU triples.

    ``lower``/``upper`` are the bounds at encoding time; ``lower_input`` and
    ``upper_input`` snapshot the same values and stay fixed while a search
    tightens its own working copies.  Instances are immutable and safe to
    share across threads.
    """

    variables: tuple[Variable, ...]
    matrix: tuple[tuple[Fraction, ...], ...]
    lower: tuple[Fraction, ...]
    upper: tuple[Fraction, ...]
    lower_input: tuple[Fraction, ...]
    upper_input: tuple[Fraction, ...]
    relus: tuple[tuple[int, int, int], ...]

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_rows(self) -> int:
        return len(self.matrix)

    def var_index(self, name: str) -> int:
        for i, v in enumerate(self.variables):
            if v.name == name:
                return i
        raise KeyError(name)

    def indices_of_kind(self, kind: str) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.kind == kind]

    def combination(self, w: Sequence[Fraction]) -> list[Fraction]:
        """Coefficients of ``w^T . A`` as a dense vector over the variables."""
        if len(w) != self.num_rows:
            raise ValueError(f"vector has length {len(w)}, expected {self.num_rows}")
        coeffs = [_ZERO] * self.num_vars
        for wi, row in zip(w, self.matrix):
            if wi == 0:
                continue
            for j, aij in enumerate(row):
                if aij != 0:
                    coeffs[j] += wi * aij
        return coeffs


def evaluate_network(network: Network, inputs: Sequence) -> list[Fraction]:
    """Forward evaluation with exact rationals."""
    values = [_as_fraction(v) for v in inputs]
    if len(values) != network.input_size:
        raise EncodingError(
            f"input has {len(values)} entries, network expects {network.input_size}")
    for layer in network.layers[1:]:
        nxt = []
        for row, bias in zip(layer.weights, layer.biases):
            acc = bias
            for wij, vj in zip(row, values):
                if wij != 0:
                    acc += wij * vj
            if layer.activation == RELU:
                acc = acc if acc > 0 else _ZERO
            nxt.append(acc)
        values = nxt
    return values


def _interval_affine(row: Sequence[Fraction], bias: Fraction,
                     los: Sequence[Fraction], his: Sequence[Fraction]):
    lo = bias
    hi = bias
    for w, a, b in zip(row, los, his):
        if w > 0:
            lo += w * a
            hi += w * b
        elif w < 0:
            lo += w * b
            hi += w * a
    return lo, hi


def encode_query(network: Network, prop: Property,
                 slack: Fraction | int | str = 0) -> TableauQuery:
    """Lower (network, property) to the tableau form.

    Initial bounds for internal variables come from exact interval
    propagation, widened on each side by ``slack`` (a non-negative rational).
    Widening keeps the bounds sound while leaving room for the deduction
    engine to re-tighten them and learn lemmas.  ``prop.assumed_bounds``
    entries replace the derived interval for the named variable.

    Raises ``EncodingError`` on dimension mismatches, on an input variable
    without finite bounds, and on any initial interval that is empty after
    assumptions are applied.
    """
    pad = _as_fraction(slack)
    if pad < 0:
        raise EncodingError("slack must be non-negative")
    if len(prop.input_bounds) != network.input_size:
        raise EncodingError(
            f"property bounds {len(prop.input_bounds)} inputs, "
            f"network has {network.input_size}")
    for c in prop.output_constraints:
        if len(c.coeffs) != network.output_size:
            raise EncodingError("output constraint arity disagrees with network")

    assumed = dict(prop.assumed_bounds)
    needs_const = any(b != 0 for layer in network.layers[1:] for b in layer.biases)

    variables: list[Variable] = []
    lower: list[Fraction] = []
    upper: list[Fraction] = []

    def add_var(name: str, kind: str, lo: Fraction, hi: Fraction) -> int:
        # An empty interval is representable: the query is then trivially
        # infeasible and the search reports it as an empty-box leaf.
        if name in assumed:
            lo, hi = assumed.pop(name)
            if kind in (KIND_POST, KIND_AUX):
                lo = max(lo, _ZERO)
        variables.append(Variable(name, kind))
        lower.append(lo)
        upper.append(hi)
        return len(variables) - 1

    for j in range(network.input_size):
        lo, hi = prop.input_bounds[j]
        if lo is None or hi is None:
            raise EncodingError(f"input x{j} must have finite bounds")
        add_var(f"x{j}", KIND_INPUT, lo, hi)

    # (value-variable index, lower, upper) per neuron of the previous layer;
    # for ReLU neurons the value variable is f, for identity ones it is b.
    prev: list[tuple[int, Fraction, Fraction]] = [
        (j, lower[j], upper[j]) for j in range(network.input_size)]

    relus: list[tuple[int, int, int]] = []
    # Equation rows are assembled as sparse {var: coeff} maps and densified
    # once the variable count is known.
    rows: list[dict[int, Fraction]] = []
    const_terms: list[Fraction] = []  # bias coefficient per row (column added last)

    def add_row(terms: dict[int, Fraction], bias: Fraction) -> None:
        rows.append(terms)
        const_terms.append(bias)

    for lidx, layer in enumerate(network.layers[1:-1], start=1):
        nxt: list[tuple[int, Fraction, Fraction]] = []
        for j in range(layer.size):
            wrow = layer.weights[j]
            bias = layer.biases[j]
            lo, hi = _interval_affine(wrow, bias,
                                      [p[1] for p in prev], [p[2] for p in prev])
            b_idx = add_var(f"b{lidx}_{j}", KIND_PRE, lo - pad, hi + pad)
            terms = {b_idx: Fraction(-1)}
            for (vi, _, _), w in zip(prev, wrow):
                if w != 0:
                    terms[vi] = terms.get(vi, _ZERO) + w
            add_row(terms, bias)
            if layer.activation == RELU:
                blo, bhi = lower[b_idx], upper[b_idx]
                flo = max(_ZERO, blo)
                fhi = max(_ZERO, bhi) + pad
                f_idx = add_var(f"f{lidx}_{j}", KIND_POST, flo, fhi)
                a_idx = add_var(f"a{lidx}_{j}", KIND_AUX, _ZERO,
                                upper[f_idx] - lower[b_idx])
                # a = f - b
                add_row({f_idx: _ONE, b_idx: Fraction(-1), a_idx: Fraction(-1)},
                        _ZERO)
                relus.append((b_idx, f_idx, a_idx))
                nxt.append((f_idx, lower[f_idx], upper[f_idx]))
            else:
                nxt.append((b_idx, lower[b_idx], upper[b_idx]))
        prev = nxt

    out_layer = network.layers[-1]
    out_indices: list[int] = []
    for j in range(out_layer.size):
        wrow = out_layer.weights[j]
        bias = out_layer.biases[j]
        lo, hi = _interval_affine(wrow, bias,
                                  [p[1] for p in prev], [p[2] for p in prev])
        lo -= pad
        hi += pad
        # Single-variable output constraints become bounds on y directly.
        for c in prop.output_constraints:
            if c.term_count() == 1 and c.coeffs[j] != 0:
                if c.coeffs[j] > 0:
                    hi = min(hi, c.bound / c.coeffs[j])
                else:
                    lo = max(lo, c.bound / c.coeffs[j])
        y_idx = add_var(f"y{j}", KIND_OUTPUT, lo, hi)
        terms = {y_idx: Fraction(-1)}
        for (vi, _, _), w in zip(prev, wrow):
            if w != 0:
                terms[vi] = terms.get(vi, _ZERO) + w
        add_row(terms, bias)
        out_indices.append(y_idx)

    # Multi-term output constraints get a slack variable s = sum(c_j * y_j)
    # with u(s) = bound.
    slack_no = 0
    for c in prop.output_constraints:
        if c.term_count() < 2:
            continue
        lo, hi = _interval_affine(c.coeffs, _ZERO,
                                  [lower[i] for i in out_indices],
                                  [upper[i] for i in out_indices])
        s_idx = add_var(f"s{slack_no}", KIND_SLACK, lo, min(hi, c.bound))
        slack_no += 1
        terms = {s_idx: Fraction(-1)}
        for yi, coef in zip(out_indices, c.coeffs):
            if coef != 0:
                terms[yi] = terms.get(yi, _ZERO) + coef
        add_row(terms, _ZERO)

    if needs_const:
        one_idx = add_var("one", KIND_CONST, _ONE, _ONE)
        for terms, bias in zip(rows, const_terms):
            if bias != 0:
                terms[one_idx] = bias

    if assumed:
        raise EncodingError(f"assumed bounds name unknown variables: {sorted(assumed)}")

    n = len(variables)
    matrix = tuple(
        tuple(terms.get(j, _ZERO) for j in range(n)) for terms in rows)
    lo_t = tuple(lower)
    hi_t = tuple(upper)
    return TableauQuery(
        variables=tuple(variables),
        matrix=matrix,
        lower=lo_t,
        upper=hi_t,
        lower_input=lo_t,
        upper_input=hi_t,
        relus=tuple(relus),
    )
