"""Candidate target models built from mass-action terms.

A :class:`Term` is a product of at most two variables, optionally multiplied
by the target ``Y`` or its complement ``Z = 2 - Y`` (the sign-constrained
metabolic class).  A :class:`Model` is a set of terms; its right-hand side is
a linear combination of the term values.
"""
from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Term",
    "Model",
    "ModelCollection",
    "ModelSpaceError",
    "all_terms",
    "metabolic_terms",
    "enumerate_exhaustive",
    "enumerate_main_effect",
    "enumerate_metabolic",
    "model_depends_on",
    "parse_term",
    "parse_model",
    "count_exhaustive",
]

MAX_MODELS = 10**8
_AUX_RANK = {None: 0, "Z": 1, "Y": 2}
_SIGN_FOR_AUX = {None: "free", "Z": "nonneg", "Y": "nonpos"}


class ModelSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    """Product ``aux * X[vars[0]] * X[vars[1]]`` (factors optional).

    ``vars`` holds zero-based variable indices in nondecreasing order.
    """

    vars: tuple
    aux: str | None = None
    sign: str = "free"

    def __post_init__(self):
        v = tuple(sorted(int(j) for j in self.vars))
        if len(v) > 2:
            raise ModelSpaceError("terms have at most two variable factors")
        if any(j < 0 for j in v):
            raise ModelSpaceError("negative variable index")
        if self.aux not in _AUX_RANK:
            raise ModelSpaceError(f"unknown auxiliary factor {self.aux!r}")
        if not v and self.aux is None:
            raise ModelSpaceError("empty term")
        if self.sign not in ("free", "nonneg", "nonpos"):
            raise ModelSpaceError(f"unknown sign {self.sign!r}")
        object.__setattr__(self, "vars", v)

    @classmethod
    def linear(cls, j):
        return cls((j,))

    @classmethod
    def interaction(cls, j, k):
        return cls((j, k))

    @classmethod
    def metabolic(cls, vars, aux):
        return cls(tuple(vars), aux, _SIGN_FOR_AUX[aux])

    @property
    def kind(self):
        return {0: "constant", 1: "linear", 2: "interaction"}[len(self.vars)]

    def sort_key(self):
        return (_AUX_RANK[self.aux], len(self.vars), self.vars)

    def __lt__(self, other):
        return self.sort_key() < other.sort_key()

    def depends_on(self, j):
        return j in self.vars

    def values(self, X, target_index=None):
        """Term value along a trajectory; ``X`` has shape (d, L) (or (d, ...))."""
        X = np.asarray(X, dtype=float)
        out = np.ones(X.shape[1:])
        for j in self.vars:
            out = out * X[j]
        if self.aux is not None:
            if target_index is None:
                raise ModelSpaceError("metabolic terms need the target index")
            y = X[target_index]
            out = out * (y if self.aux == "Y" else 2.0 - y)
        return out

    def label(self, names=None):
        parts = [self.aux] if self.aux else []
        parts += [names[j] if names is not None else f"X{j + 1}" for j in self.vars]
        return "*".join(parts)

    def __str__(self):
        return self.label()


def parse_term(text, sign=None):
    factors = [f.strip() for f in text.strip().split("*") if f.strip()]
    aux, idx = None, []
    for f in factors:
        if f in ("Y", "Z"):
            if aux is not None:
                raise ModelSpaceError(f"two auxiliary factors in {text!r}")
            aux = f
        else:
            m = re.fullmatch(r"X(\d+)", f)
            if not m or int(m.group(1)) < 1:
                raise ModelSpaceError(f"cannot parse factor {f!r}")
            idx.append(int(m.group(1)) - 1)
    if sign is None:
        sign = _SIGN_FOR_AUX[aux]
    return Term(tuple(idx), aux, sign)


@dataclass(frozen=True)
class Model:
    """A sparsity pattern over terms, stored in canonical order."""

    terms: tuple
    class_tag: str = "custom"

    def __post_init__(self):
        terms = tuple(sorted(set(self.terms)))
        if not terms:
            raise ModelSpaceError("a model needs at least one term")
        if len(terms) != len(self.terms):
            raise ModelSpaceError("duplicate terms in model")
        if self.class_tag not in ("exhaustive", "main_effect", "metabolic", "custom"):
            raise ModelSpaceError(f"unknown class tag {self.class_tag!r}")
        if self.class_tag == "metabolic":
            for t in terms:
                if t.aux is None or t.sign != _SIGN_FOR_AUX[t.aux]:
                    raise ModelSpaceError("metabolic terms carry a Y or Z factor with matching sign")
        object.__setattr__(self, "terms", terms)

    def __len__(self):
        return len(self.terms)

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    @property
    def signs(self):
        return [t.sign for t in self.terms]

    @property
    def sign_constrained(self):
        return any(s != "free" for s in self.signs)

    def variables(self):
        return sorted({j for t in self.terms for j in t.vars})

    def depends_on(self, j):
        return any(t.depends_on(j) for t in self.terms)

    def label(self, names=None):
        if not self.sign_constrained:
            return " + ".join(t.label(names) for t in self.terms)
        out = []
        for t in self.terms:
            op = "-" if t.sign == "nonpos" else "+"
            out.append(f"{op}{t.label(names)}" if not out else f"{op} {t.label(names)}")
        return " ".join(out)

    def __str__(self):
        return self.label()

    def to_json(self):
        return [{"vars": list(t.vars), "aux": t.aux, "sign": t.sign} for t in self.terms]

    @classmethod
    def from_json(cls, obj, class_tag="custom"):
        return cls(tuple(Term(tuple(t["vars"]), t.get("aux"), t.get("sign", "free")) for t in obj), class_tag)


def parse_model(text, class_tag="custom"):
    """Parse ``"X1*X7 + X3"`` or ``"+Z*X56*X122 - Y*X33*X138"``."""
    tokens = re.findall(r"([+-]?)\s*([^+\-\s][^+\-]*)", text)
    terms = []
    for op, body in tokens:
        t = parse_term(body)
        if op == "-" and t.aux is None:
            raise ModelSpaceError("only Y-factor terms may carry a minus sign")
        terms.append(t)
    return Model(tuple(terms), class_tag)


def model_depends_on(model: Model, j: int) -> bool:
    return model.depends_on(j)


@dataclass
class ModelCollection:
    models: list
    generator_spec: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    def __getitem__(self, i):
        return self.models[i]

    def terms(self):
        """Sorted union of the terms used by the collection."""
        return sorted({t for m in self.models for t in m.terms})

    def dependence_counts(self, d):
        """Number of models that depend on each variable."""
        counts = np.zeros(d, dtype=int)
        for m in self.models:
            for j in m.variables():
                counts[j] += 1
        return counts

    def to_json(self):
        return {
            "generator_spec": self.generator_spec,
            "models": [str(m) for m in self.models],
        }


# ------------------------------------------------------------ enumeration


def all_terms(d):
    """``X_1..X_d`` followed by ``X_jX_k`` for ``j <= k`` (lexicographic)."""
    lin = [Term.linear(j) for j in range(d)]
    inter = [Term.interaction(j, k) for j in range(d) for k in range(j, d)]
    return lin + inter


def metabolic_terms(d, target_index):
    """Candidate terms ``{Z,Y} * X_j * X_k``, ``{Z,Y} * X_j`` and ``Z``, ``Y``."""
    preds = [j for j in range(d) if j != target_index]
    out = []
    for aux in ("Z", "Y"):
        out.append(Term.metabolic((), aux))
        out += [Term.metabolic((j,), aux) for j in preds]
        out += [Term.metabolic((j, k), aux) for a, j in enumerate(preds) for k in preds[a:]]
    return sorted(out)


def count_exhaustive(n_terms, p):
    return sum(math.comb(n_terms, k) for k in range(1, p + 1))


def _guard(count):
    if count > MAX_MODELS:
        raise ModelSpaceError(f"{count} models exceed the limit of {MAX_MODELS}; screen terms first")


def enumerate_exhaustive(d, p, allowed_terms=None) -> ModelCollection:
    """All models with 1..p terms drawn from ``allowed_terms``."""
    if d < 1:
        raise ModelSpaceError("d must be positive")
    terms = list(allowed_terms) if allowed_terms is not None else all_terms(d)
    if len(set(terms)) != len(terms):
        raise ModelSpaceError("duplicate allowed terms")
    if not 1 <= p <= len(terms):
        raise ModelSpaceError(f"p must lie in [1, {len(terms)}]")
    _guard(count_exhaustive(len(terms), p))
    models = [
        Model(combo, "exhaustive")
        for k in range(1, p + 1)
        for combo in itertools.combinations(terms, k)
    ]
    spec = {"d": d, "p": p, "class": "exhaustive", "screened_terms": [str(t) for t in terms] if allowed_terms is not None else None}
    return ModelCollection(models, spec)


def _closure(S):
    return [Term.linear(j) for j in S] + [
        Term.interaction(j, k) for a, j in enumerate(S) for k in S[a:]
    ]


def enumerate_main_effect(d, p) -> ModelCollection:
    """Models containing every linear and pairwise term of a variable set.

    A variable set of size ``s`` gives ``s + s(s+1)/2`` terms; all sets whose
    model has at most ``p`` terms are returned (``p = 9``: up to 3 variables).
    """
    if d < 1 or p < 1:
        raise ModelSpaceError("d and p must be positive")
    sizes = [s for s in range(1, d + 1) if s + s * (s + 1) // 2 <= p]
    if not sizes:
        raise ModelSpaceError("p is too small for any main-effect model (needs p >= 2)")
    _guard(sum(math.comb(d, s) for s in sizes))
    models = [
        Model(tuple(_closure(list(S))), "main_effect")
        for s in sizes
        for S in itertools.combinations(range(d), s)
    ]
    return ModelCollection(models, {"d": d, "p": p, "class": "main_effect", "screened_terms": None})


def enumerate_metabolic(d, screened_terms, n_terms=3) -> ModelCollection:
    """All ``n_terms``-subsets of sign-constrained metabolic terms."""
    terms = list(screened_terms)
    if not terms:
        raise ModelSpaceError("empty screened term list")
    if n_terms < 1 or n_terms > len(terms):
        raise ModelSpaceError(f"n_terms must lie in [1, {len(terms)}]")
    _guard(math.comb(len(terms), n_terms))
    fixed = [Term.metabolic(t.vars, t.aux) if t.aux else t for t in terms]
    if any(t.aux is None for t in fixed):
        raise ModelSpaceError("metabolic terms need a Y or Z factor")
    models = [Model(c, "metabolic") for c in itertools.combinations(fixed, n_terms)]
    spec = {"d": d, "p": n_terms, "class": "metabolic", "screened_terms": [str(t) for t in fixed]}
    return ModelCollection(models, spec)


def collection_from_strings(lines, class_tag="custom") -> ModelCollection:
    return ModelCollection([parse_model(s, class_tag) for s in lines], {"class": class_tag})


def dump_collection(collection, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(collection.to_json(), fh, indent=1)
        fh.write("\n")
