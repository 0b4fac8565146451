"""Decision-boundary rationale of head-to-tail fusion.

Features and classifier weights are split into a retained part (dot) and a
fused part (double dot). For a tail class t and a head class h:

- a misclassified tail sample satisfies  w_t.f_t < w_h.f_t          (premise A)
- a correctly classified fused sample   w_t.[f_t', f_h''] > w_h.[f_t', f_h'']  (premise B)
- a correctly classified head sample     w_h.f_h > w_t.f_h          (premise C)

A + B imply  w_h''.(f_t'' - f_h'') > w_t''.(f_t'' - f_h'')  (and its cosine form),
C + B imply  w_t'.(f_t' - f_h') > w_h'.(f_t' - f_h'),
and a correct tail sample together with a correctly classified fused head
sample imply the latter as well. The implication checks below verify this
inequality algebra numerically; the measurement reports the four force
proxies on a trained model.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..core.errors import ValidationError
from ..core.fusion import FusionMask
from ..core.model import ModelState, pooled_features
from ..data.longtail import DatasetBundle


@dataclass(eq=False)
class RationaleSplit:
    """Retained and fused parts of one (feature, classifier weight) pair"""
    f_retained: np.ndarray
    f_fused: np.ndarray
    w_retained: np.ndarray
    w_fused: np.ndarray
    mask: FusionMask

    @classmethod
    def from_vectors(cls, f: np.ndarray, w: np.ndarray, mask: FusionMask) -> "RationaleSplit":
        if f.shape != (mask.d,) or w.shape != (mask.d,):
            raise ValidationError(f"feature {f.shape} and weight {w.shape} must both be ({mask.d},)")
        kept, fused = mask.retained, mask.replaced
        return cls(f[kept], f[fused], w[kept], w[fused], mask)

    def reconstruct(self):
        f = np.empty(self.mask.d, dtype=self.f_fused.dtype)
        w = np.empty(self.mask.d, dtype=self.w_fused.dtype)
        f[self.mask.retained], f[self.mask.replaced] = self.f_retained, self.f_fused
        w[self.mask.retained], w[self.mask.replaced] = self.w_retained, self.w_fused
        return f, w


def _projection(w: np.ndarray, direction: np.ndarray, eps: float = 1e-12) -> Optional[float]:
    """|w| cos(angle between w and direction), or None for a zero direction"""
    norm = np.linalg.norm(direction)
    if norm <= eps:
        return None
    return float(np.dot(w, direction) / norm)


@dataclass
class ForceProxies:
    """|w| cos(theta) terms; the fused ones pull w_h toward tail samples,
    the retained ones pull w_t toward them"""
    fused_head: Optional[float]
    fused_tail: Optional[float]
    retained_tail: Optional[float]
    retained_head: Optional[float]
    fused_angle_head: Optional[float] = None
    fused_angle_tail: Optional[float] = None
    retained_angle_tail: Optional[float] = None
    retained_angle_head: Optional[float] = None

    @property
    def fused_gap(self) -> Optional[float]:
        if self.fused_head is None or self.fused_tail is None:
            return None
        return self.fused_head - self.fused_tail

    @property
    def retained_gap(self) -> Optional[float]:
        if self.retained_tail is None or self.retained_head is None:
            return None
        return self.retained_tail - self.retained_head

    def to_dict(self) -> Dict:
        return {
            'fused_head': self.fused_head, 'fused_tail': self.fused_tail,
            'retained_tail': self.retained_tail, 'retained_head': self.retained_head,
            'fused_gap': self.fused_gap, 'retained_gap': self.retained_gap,
            'fused_angle_head': self.fused_angle_head, 'fused_angle_tail': self.fused_angle_tail,
            'retained_angle_tail': self.retained_angle_tail,
            'retained_angle_head': self.retained_angle_head,
        }


def _angle(w: np.ndarray, direction: np.ndarray, eps: float = 1e-12) -> Optional[float]:
    denom = np.linalg.norm(w) * np.linalg.norm(direction)
    if denom <= eps:
        return None
    return float(np.arccos(np.clip(np.dot(w, direction) / denom, -1.0, 1.0)))


def force_proxies(w_head: np.ndarray, w_tail: np.ndarray, f_head: np.ndarray, f_tail: np.ndarray,
                  mask: FusionMask) -> ForceProxies:
    head = RationaleSplit.from_vectors(np.asarray(f_head, float), np.asarray(w_head, float), mask)
    tail = RationaleSplit.from_vectors(np.asarray(f_tail, float), np.asarray(w_tail, float), mask)
    fused_dir = tail.f_fused - head.f_fused
    retained_dir = tail.f_retained - head.f_retained
    return ForceProxies(
        fused_head=_projection(head.w_fused, fused_dir),
        fused_tail=_projection(tail.w_fused, fused_dir),
        retained_tail=_projection(tail.w_retained, retained_dir),
        retained_head=_projection(head.w_retained, retained_dir),
        fused_angle_head=_angle(head.w_fused, fused_dir),
        fused_angle_tail=_angle(tail.w_fused, fused_dir),
        retained_angle_tail=_angle(tail.w_retained, retained_dir),
        retained_angle_head=_angle(head.w_retained, retained_dir),
    )


def class_mean_features(model: ModelState, data: DatasetBundle) -> np.ndarray:
    """Mean pooled feature of every class, shape (C, d)"""
    features = pooled_features(model, data.features).astype(np.float64)
    sums = np.zeros((data.num_classes, features.shape[1]))
    np.add.at(sums, data.labels, features)
    return sums / data.counts.as_array()[:, None]


def rationale_measure(model: ModelState, data: DatasetBundle, mask: FusionMask,
                      head_class: int, tail_class: int,
                      class_means: Optional[np.ndarray] = None) -> ForceProxies:
    """Force proxies of a trained classifier for one (head, tail) class pair,
    with class-mean training features standing in for f_h and f_t"""
    for c in (head_class, tail_class):
        if not 0 <= c < model.num_classes:
            raise ValidationError(f"class {c} outside [0, {model.num_classes - 1}]")
    if mask.d != model.spec.feature_dim:
        raise ValidationError(f"mask covers {mask.d} channels, features have {model.spec.feature_dim}")
    means = class_means if class_means is not None else class_mean_features(model, data)
    weight = model.classifier["classifier.weight"].value.astype(np.float64)
    return force_proxies(weight[:, head_class], weight[:, tail_class],
                         means[head_class], means[tail_class], mask)


@dataclass
class ImplicationResult:
    """Admissible trials and conclusion violations per implication"""
    trials: int
    admissible: Dict[str, int] = field(default_factory=dict)
    violations: Dict[str, int] = field(default_factory=dict)

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum('ij,ij->i', a, b)


def check_implications(w_head: np.ndarray, w_tail: np.ndarray, f_head: np.ndarray, f_tail: np.ndarray,
                       split_k: int, rtol: float = 1e-6, eps: float = 1e-12) -> ImplicationResult:
    """Evaluate the three implications on rows of (n, d) arrays.

    The first ``split_k`` coordinates are the retained part. Rows whose
    premises fail, or whose difference vector is zero, are skipped.
    """
    w_h, w_t, f_h, f_t = (np.atleast_2d(np.asarray(a, dtype=np.float64))
                          for a in (w_head, w_tail, f_head, f_tail))
    d = w_h.shape[1]
    if not 1 <= split_k < d:
        raise ValidationError(f"need 1 <= split_k < d, got split_k={split_k}, d={d}")
    k = split_k

    def parts(a):
        return a[:, :k], a[:, k:]

    (wh1, wh2), (wt1, wt2), (fh1, fh2), (ft1, ft2) = map(parts, (w_h, w_t, f_h, f_t))

    # logit pieces; e.g. t_t1 = w_t' . f_t'
    t_t1, t_t2 = _rowdot(wt1, ft1), _rowdot(wt2, ft2)
    h_t1, h_t2 = _rowdot(wh1, ft1), _rowdot(wh2, ft2)
    t_h1, t_h2 = _rowdot(wt1, fh1), _rowdot(wt2, fh2)
    h_h1, h_h2 = _rowdot(wh1, fh1), _rowdot(wh2, fh2)

    misclassified_tail = t_t1 + t_t2 < h_t1 + h_t2
    fused_tail_correct = t_t1 + t_h2 > h_t1 + h_h2
    head_correct = h_h1 + h_h2 > t_h1 + t_h2
    tail_correct = t_t1 + t_t2 > h_t1 + h_t2
    fused_head_correct = h_h1 + h_t2 > t_h1 + t_t2

    fused_dir, retained_dir = ft2 - fh2, ft1 - fh1
    fused_norm = np.linalg.norm(fused_dir, axis=1)
    retained_norm = np.linalg.norm(retained_dir, axis=1)
    scale = 1.0 + np.abs(np.stack([t_t1, t_t2, h_t1, h_t2, t_h1, t_h2, h_h1, h_h2])).sum(axis=0)

    def violated(lhs, rhs, norm):
        # lhs > rhs must hold, both as dot products and divided by the norm
        slack = rtol * scale
        dot_form = lhs - rhs < -slack
        safe = np.where(norm > eps, norm, 1.0)
        cos_form = lhs / safe - rhs / safe < -slack / safe
        return dot_form | cos_form

    fused_lhs, fused_rhs = _rowdot(wh2, fused_dir), _rowdot(wt2, fused_dir)
    retained_lhs, retained_rhs = _rowdot(wt1, retained_dir), _rowdot(wh1, retained_dir)

    checks = {
        'misclassified_tail+fused_tail=>fused_gap':
            (misclassified_tail & fused_tail_correct & (fused_norm > eps), fused_lhs, fused_rhs, fused_norm),
        'correct_head+fused_tail=>retained_gap':
            (head_correct & fused_tail_correct & (retained_norm > eps), retained_lhs, retained_rhs, retained_norm),
        'correct_tail+fused_head=>retained_gap':
            (tail_correct & fused_head_correct & (retained_norm > eps), retained_lhs, retained_rhs, retained_norm),
    }
    result = ImplicationResult(trials=len(w_h))
    for name, (admissible, lhs, rhs, norm) in checks.items():
        result.admissible[name] = int(admissible.sum())
        result.violations[name] = int((admissible & violated(lhs, rhs, norm)).sum())
    return result


def rationale_implication_test(num_trials: int, d: int, split_k: int,
                               rng: np.random.Generator, rtol: float = 1e-6) -> ImplicationResult:
    """Brute-force the rationale implications on Gaussian random vectors"""
    if num_trials < 1:
        raise ValidationError(f"num_trials must be >= 1, got {num_trials}")
    if not 1 <= split_k < d:
        raise ValidationError(f"need 1 <= split_k < d, got split_k={split_k}, d={d}")
    w_h, w_t, f_h, f_t = rng.standard_normal((4, num_trials, d))
    return check_implications(w_h, w_t, f_h, f_t, split_k, rtol=rtol)
