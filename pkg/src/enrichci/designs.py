"""Two-stage enrichment designs and interim decision rules.

A trial splits patients across ``k`` subpopulations with known prevalences.
After stage 1 an interim rule keeps the full population, restricts
enrollment to a subset, or stops for futility. Each realized decision is
an interval constraint on one stage 1 statistic; this module evaluates
the rules, records those truncation bounds per estimation target, and
pools stage summaries into the final estimates and intervals.
"""

import math
from dataclasses import dataclass
from typing import Optional

from .condnorm import ConditionalNormal
from .intervals import ctost_ci, naive_ci, umau_ci


class ConfigurationError(ValueError):
    """Design, rule and data are inconsistent (wrong k, missing target...)."""


@dataclass(frozen=True)
class TrialDesign:
    """Static trial parameters.

    Parameters
    ----------
    k : int
        Number of subpopulations.
    p : tuple of float
        Subpopulation prevalences, positive and summing to one.
    n1, n2 : int
        Patients enrolled in stage 1 and stage 2.
    sigma : float
        Common outcome standard deviation (both arms).
    alpha : float
        Two-sided error level for intervals.
    """

    k: int
    p: tuple
    n1: int
    n2: int
    sigma: float
    alpha: float = 0.05

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        p = tuple(float(v) for v in self.p)
        object.__setattr__(self, "p", p)
        if len(p) != self.k:
            raise ConfigurationError(f"p has {len(p)} entries, expected k={self.k}")
        if any(v <= 0.0 for v in p):
            raise ConfigurationError(f"prevalences must be positive, got {p}")
        if abs(sum(p) - 1.0) > 1e-12:
            raise ConfigurationError(f"prevalences must sum to 1, got {sum(p)}")
        if not (self.n1 > 0 and self.n2 > 0):
            raise ConfigurationError(
                f"stage sizes must be positive, got n1={self.n1}, n2={self.n2}"
            )
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.alpha < 0.5:
            raise ConfigurationError(
                f"alpha must lie in (0, 0.5), got {self.alpha}"
            )

    def prevalence(self, members):
        return sum(self.p[m - 1] for m in members)

    def stage1_se(self, members):
        """SE of the stage 1 mean difference over ``members`` (1-based)."""
        return 2.0 * self.sigma / math.sqrt(self.prevalence(members) * self.n1)

    def stage2_se_selected(self):
        # All of stage 2 enrolls from the selected population.
        return 2.0 * self.sigma / math.sqrt(self.n2)

    def stage2_se_coprimary(self, m):
        return 2.0 * self.sigma / math.sqrt(self.p[m - 1] * self.n2)


@dataclass(frozen=True)
class Stage1Summary:
    """Per-subpopulation stage 1 mean differences."""

    means: tuple

    def __post_init__(self):
        means = tuple(float(v) for v in self.means)
        object.__setattr__(self, "means", means)
        if not all(math.isfinite(v) for v in means):
            raise ValueError(f"stage 1 means must be finite, got {means}")

    def pooled_mean(self, design, members=None):
        """Prevalence-weighted mean over ``members`` (default: everyone)."""
        if members is None:
            members = range(1, design.k + 1)
        num = sum(design.p[m - 1] * self.means[m - 1] for m in members)
        return num / design.prevalence(members)

    def z_statistics(self, design):
        return tuple(
            self.means[m - 1] / design.stage1_se((m,))
            for m in range(1, design.k + 1)
        )


@dataclass(frozen=True)
class Stage2Summary:
    """Stage 2 mean differences: selected population, plus per-subpopulation
    components in co-primary mode."""

    selected_mean: float
    sub_means: Optional[tuple] = None

    def __post_init__(self):
        if not math.isfinite(self.selected_mean):
            raise ValueError(
                f"stage 2 mean must be finite, got {self.selected_mean}"
            )
        if self.sub_means is not None:
            object.__setattr__(
                self, "sub_means", tuple(float(v) for v in self.sub_means)
            )


@dataclass(frozen=True)
class TruncationTarget:
    """One estimand with its realized selection constraint.

    ``coprimary`` is None for the selected-population effect (the stage 1
    statistic is the pooled mean over ``members``); otherwise it names the
    subpopulation whose effect is estimated alongside full continuation.
    ``unaltered`` marks decisions that constrain only a statistic
    independent of this target, leaving its law untruncated.
    """

    name: str
    members: tuple
    lower: float
    upper: float
    se1: float
    se2: float
    coprimary: Optional[int] = None
    unaltered: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigurationError(
                f"target {self.name}: empty constraint "
                f"({self.lower}, {self.upper})"
            )
        if not (self.se1 > 0.0 and self.se2 > 0.0):
            raise ConfigurationError(
                f"target {self.name}: SEs must be positive "
                f"({self.se1}, {self.se2})"
            )

    def stage1_value(self, design, s1):
        if self.coprimary is not None:
            return s1.means[self.coprimary - 1]
        return s1.pooled_mean(design, self.members)

    def stage2_value(self, s2):
        if self.coprimary is not None:
            if s2.sub_means is None:
                raise ConfigurationError(
                    f"target {self.name}: co-primary estimate requires "
                    "per-subpopulation stage 2 means"
                )
            return s2.sub_means[self.coprimary - 1]
        return s2.selected_mean

    def true_value(self, design, deltas):
        if self.coprimary is not None:
            return float(deltas[self.coprimary - 1])
        num = sum(design.p[m - 1] * deltas[m - 1] for m in self.members)
        return num / design.prevalence(self.members)


@dataclass(frozen=True)
class InterimDecision:
    """Selected index set (empty = futility) and its estimation targets."""

    selected: tuple
    targets: tuple

    @property
    def stopped(self):
        return len(self.selected) == 0

    @property
    def label(self):
        if self.stopped:
            return "stop"
        return self.targets[0].name


def _selection_label(members, k=None):
    members = tuple(members)
    if k is not None and len(members) == k:
        return "full"
    if len(members) == 1:
        return f"sub{members[0]}"
    lo, hi = members[0], members[-1]
    if members == tuple(range(lo, hi + 1)) and lo == 1:
        return f"sub1-{hi}"
    return "+".join(f"sub{m}" for m in members)


def _selected_target(design, members, lower, upper, name=None, unaltered=False):
    return TruncationTarget(
        name=name or _selection_label(members, design.k),
        members=tuple(members),
        lower=lower,
        upper=upper,
        se1=design.stage1_se(members),
        se2=design.stage2_se_selected(),
        unaltered=unaltered,
    )


def _coprimary_targets(design, bounds):
    """Per-subpopulation targets under full continuation.

    ``bounds`` maps subpopulation index to its realized (l, u).
    """
    out = []
    for m in range(1, design.k + 1):
        l, u = bounds[m]
        out.append(
            TruncationTarget(
                name=f"delta{m}",
                members=(m,),
                lower=l,
                upper=u,
                se1=design.stage1_se((m,)),
                se2=design.stage2_se_coprimary(m),
                coprimary=m,
            )
        )
    return out


def _require_two_populations(design, rule_name):
    if design.k != 2:
        raise ConfigurationError(f"{rule_name} requires k=2, got k={design.k}")


def apply_d1(design, s1, z_star, co_primary=False):
    """Standardized-mean rule: keep everyone if the pooled Z-statistic
    clears ``z_star``, otherwise enrich to the higher-Z subpopulation
    (ties favor subpopulation 1)."""
    _require_two_populations(design, "the Z-threshold rule")
    p1, p2 = design.p
    m1, m2 = s1.means
    full_se = design.stage1_se((1, 2))
    z_full = s1.pooled_mean(design) / full_se
    if z_full > z_star:
        threshold = full_se * z_star
        targets = [_selected_target(design, (1, 2), threshold, math.inf)]
        if co_primary:
            bounds = {
                1: ((threshold - p2 * m2) / p1, math.inf),
                2: ((threshold - p1 * m1) / p2, math.inf),
            }
            targets.extend(_coprimary_targets(design, bounds))
        return InterimDecision((1, 2), tuple(targets))
    z1, z2 = s1.z_statistics(design)
    if z1 >= z2:
        lower = math.sqrt(p2 / p1) * m2
        upper = design.stage1_se((1, 2)) * z_star / p1 - (p2 / p1) * m2
        target = _selected_target(design, (1,), lower, upper)
        return InterimDecision((1,), (target,))
    lower = math.sqrt(p1 / p2) * m1
    upper = design.stage1_se((1, 2)) * z_star / p2 - (p1 / p2) * m1
    target = _selected_target(design, (2,), lower, upper)
    return InterimDecision((2,), (target,))


def apply_d2(design, s1, delta_star, co_primary=False):
    """Raw-mean rule: keep everyone if the pooled stage 1 mean clears
    ``delta_star``; otherwise enrich to the best subpopulation if it
    clears the threshold; otherwise stop for futility."""
    _require_two_populations(design, "the mean-threshold rule")
    p1, p2 = design.p
    m1, m2 = s1.means
    if s1.pooled_mean(design) > delta_star:
        targets = [_selected_target(design, (1, 2), delta_star, math.inf)]
        if co_primary:
            bounds = {
                1: ((delta_star - p2 * m2) / p1, math.inf),
                2: ((delta_star - p1 * m1) / p2, math.inf),
            }
            targets.extend(_coprimary_targets(design, bounds))
        return InterimDecision((1, 2), tuple(targets))
    if max(m1, m2) > delta_star:
        if m1 >= m2:
            upper = (delta_star - p2 * m2) / p1
            target = _selected_target(design, (1,), delta_star, upper)
            return InterimDecision((1,), (target,))
        upper = (delta_star - p1 * m1) / p2
        target = _selected_target(design, (2,), delta_star, upper)
        return InterimDecision((2,), (target,))
    return InterimDecision((), ())


def apply_kimani2015(design, s1, delta_star):
    """Enrich to subpopulation 1 when its stage 1 advantage over the full
    population clears ``delta_star``; otherwise continue with everyone.

    The continuation event constrains only the difference statistic,
    which is independent of the pooled full-population estimator, so the
    full-population target is marked untruncated.
    """
    _require_two_populations(design, "the subgroup-advantage rule")
    p2 = design.p[1]
    m1, m2 = s1.means
    advantage = m1 - s1.pooled_mean(design)  # equals p2 * (m1 - m2)
    if advantage > delta_star:
        lower = m2 + delta_star / p2
        target = _selected_target(design, (1,), lower, math.inf)
        return InterimDecision((1,), (target,))
    target = _selected_target(
        design, (1, 2), -math.inf, math.inf, unaltered=True
    )
    return InterimDecision((1, 2), (target,))


def apply_kimani2018(design, s1, delta_star):
    """Nested-subgroup rule: order subpopulations by presumed effect and
    select the largest leading block {1..m} whose pooled stage 1 mean
    clears ``delta_star`` while every larger block fails; stop if no
    block qualifies."""
    p = design.p
    means = s1.means
    k = design.k
    cum_p = [0.0]
    cum_pm = [0.0]
    for m in range(1, k + 1):
        cum_p.append(cum_p[-1] + p[m - 1])
        cum_pm.append(cum_pm[-1] + p[m - 1] * means[m - 1])
    for m in range(k, 0, -1):
        if cum_pm[m] / cum_p[m] > delta_star:
            if m == k:
                upper = math.inf
            else:
                # Rearranged block-mean constraints for m' > m:
                # block [j] fails iff the [m] statistic is at most
                # (p_[j] delta* - sum_{m+1..j} p_i mean_i) / p_[m].
                upper = min(
                    (cum_p[j] * delta_star - (cum_pm[j] - cum_pm[m])) / cum_p[m]
                    for j in range(m + 1, k + 1)
                )
            members = tuple(range(1, m + 1))
            target = _selected_target(design, members, delta_star, upper)
            return InterimDecision(members, (target,))
    return InterimDecision((), ())


def pooled_estimate(design, decision, s1, s2, target):
    """Precision-weighted pool of the two stage estimates for ``target``.

    Coincides with the patient-count-weighted mean under the enrollment
    scheme (stage 2 enrolls proportionally within the selected set).
    """
    if target not in decision.targets:
        raise ConfigurationError(f"target {target.name} not in decision")
    tau1 = 1.0 / target.se1**2
    tau2 = 1.0 / target.se2**2
    v1 = target.stage1_value(design, s1)
    v2 = target.stage2_value(s2)
    return (tau1 * v1 + tau2 * v2) / (tau1 + tau2)


def confidence_intervals(design, decision, s1, s2, methods, alpha=None):
    """Intervals for every target of a realized (non-futility) decision.

    Returns a list of IntervalEstimate, one per (target, method), in
    target order then method order.
    """
    if decision.stopped:
        raise ConfigurationError(
            "a futility stop has no estimand; no intervals are defined"
        )
    if not methods:
        raise ConfigurationError("methods must be non-empty")
    alpha = design.alpha if alpha is None else alpha
    out = []
    for target in decision.targets:
        observed = pooled_estimate(design, decision, s1, s2, target)
        model = ConditionalNormal(
            0.0, target.se1, target.se2,
            lower=target.lower, upper=target.upper,
        )
        for method in methods:
            if method == "naive":
                out.append(
                    naive_ci(observed, model.sigma12, alpha, target=target.name)
                )
            elif method == "umau":
                out.append(umau_ci(model, observed, alpha, target=target.name))
            elif method == "tost":
                out.append(ctost_ci(model, observed, alpha, target=target.name))
            else:
                raise ConfigurationError(f"unknown method {method!r}")
    return out
