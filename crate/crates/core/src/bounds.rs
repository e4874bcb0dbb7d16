//! Convergence constants for event-triggered consensus.
//!
//! For a spanning tree whose weights are persistently exciting with constants
//! `(μ₁, μ₂, T)`, the event-free reduced system `Υ̇ = -kΛM(t)Υ` contracts at a
//! rate of at least
//!
//! ```text
//! α_v = 1/(2T) · ln 1 / [1 - 2kλ_min(Λ)μ₁ / (1 + k√p‖Λ‖μ₂)²]
//! ```
//!
//! with overshoot `m_v`. Under triggering, the broadcast error adds a forcing
//! term bounded by `C e^{-βt}` with `C = 2c√p‖Γ‖`, giving
//!
//! ```text
//! ‖x_e(t)‖ ≤ ρ (κ₁ e^{-α_v t} + κ₂ e^{-βt})
//! κ₃ = k‖Λ‖ m_v C e^{-(β-α_v)(t₀+T)} μ₂ / (e^{-(β-α_v)T} - 1)
//! κ₂ = e^{(α_v+β)T} κ₃,   κ₁ = e^{α_v t₀} m_v ‖Υ(t₀)‖ - κ₃
//! ```
//!
//! valid for `β < α_v`. The inter-event time of every agent is then at least
//! the root `γ` of `γ e^{βγ} = c / (kρω‖D‖ S)`, where `S` bounds
//! `κ₁ e^{-(α_v-β)t₁} + κ₂` over event times `t₁ ≥ t₀`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{norm_bound, verify_pe, EdgeWeights, PeCertificate};
use crate::graph::{spectral_norm, SpanningDecomposition, Topology, TREE_ENUMERATION_CAP};
use crate::ode::{pieces, rk4_step};
use crate::trigger::{TriggerKind, TriggerSpec};

/// `1 - 2kλ_min μ₁ / (1 + k√p‖Λ‖μ₂)²`, which equals `e^{-2α_v T}`.
pub fn contraction_bracket(k: f64, lambda_min: f64, lambda_norm: f64, p: usize, mu1: f64, mu2: f64) -> f64 {
    let denom = 1.0 + k * (p as f64).sqrt() * lambda_norm * mu2;
    1.0 - 2.0 * k * lambda_min * mu1 / (denom * denom)
}

/// Lower bound on the consensus rate of the event-free system.
pub fn alpha_v(
    k: f64,
    lambda_min: f64,
    lambda_norm: f64,
    p: usize,
    mu1: f64,
    mu2: f64,
    window: f64,
) -> Result<f64> {
    let inputs = [k, lambda_min, lambda_norm, mu1, mu2, window];
    if inputs.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || p == 0 {
        return Err(Error::InvalidParameter(format!(
            "alpha_v needs positive finite inputs, got k={k} λ_min={lambda_min} ‖Λ‖={lambda_norm} p={p} μ₁={mu1} μ₂={mu2} T={window}"
        )));
    }
    let bracket = contraction_bracket(k, lambda_min, lambda_norm, p, mu1, mu2);
    if !(bracket > 0.0 && bracket < 1.0) {
        return Err(Error::Hypothesis(format!(
            "contraction bracket {bracket} is outside (0, 1)"
        )));
    }
    // ln(1/b) = -ln b; ln_1p keeps precision when b is close to 1
    Ok(-(bracket - 1.0).ln_1p() / (2.0 * window))
}

/// `C = 2c√p‖Γ‖`
pub fn error_coefficient(c: f64, p: usize, gamma_norm: f64) -> f64 {
    2.0 * c * (p as f64).sqrt() * gamma_norm
}

/// Inputs to [`kappa_constants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaInputs {
    pub k: f64,
    pub lambda_norm: f64,
    pub m_v: f64,
    pub error_coefficient: f64,
    pub mu2: f64,
    pub window: f64,
    pub alpha_v: f64,
    pub beta: f64,
    pub t0: f64,
    pub upsilon0_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappas {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
}

pub fn kappa_constants(inp: &KappaInputs) -> Result<Kappas> {
    if !(inp.beta < inp.alpha_v) {
        return Err(Error::Hypothesis(format!(
            "the envelope constants require beta < alpha_v (beta = {}, alpha_v = {})",
            inp.beta, inp.alpha_v
        )));
    }
    let delta = inp.beta - inp.alpha_v;
    let forcing = inp.k * inp.lambda_norm * inp.m_v * inp.error_coefficient * inp.mu2;
    // e^{-δT} - 1 > 0 because δ < 0
    let kappa3 = forcing * (-delta * (inp.t0 + inp.window)).exp() / (-delta * inp.window).exp_m1();
    let kappa2 = ((inp.alpha_v + inp.beta) * inp.window).exp() * kappa3;
    let kappa1 = (inp.alpha_v * inp.t0).exp() * inp.m_v * inp.upsilon0_norm - kappa3;
    Ok(Kappas {
        kappa1,
        kappa2,
        kappa3,
    })
}

/// The `β = 0` form `κ₂ = k‖Λ‖m_v C e^{α_v t₀ + 2α_v T} μ₂ / (e^{α_v T} - 1)`.
pub fn kappa2_static_closed_form(inp: &KappaInputs) -> f64 {
    inp.k * inp.lambda_norm * inp.m_v * inp.error_coefficient
        * (inp.alpha_v * inp.t0 + 2.0 * inp.alpha_v * inp.window).exp()
        * inp.mu2
        / (inp.alpha_v * inp.window).exp_m1()
}

/// Root of `γ e^{βγ} = rhs` for `γ > 0`.
pub fn solve_gamma(beta: f64, rhs: f64) -> Result<f64> {
    if !(rhs > 0.0) || !rhs.is_finite() {
        return Err(Error::InvalidParameter(format!("zeno right-hand side must be positive, got {rhs}")));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    if beta == 0.0 {
        return Ok(rhs);
    }
    let g = |x: f64| x * (beta * x).exp() - rhs;
    // γ e^{βγ} ≥ γ, so the root lies in (0, rhs]
    let (mut lo, mut hi) = (0.0f64, rhs);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(if g(lo).abs() <= g(hi).abs() { lo } else { hi })
}

/// Where `m_v` came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MvSource {
    Supplied { value: f64 },
    Estimated { step: f64, t_end: f64, peak_time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvEstimate {
    pub m_v: f64,
    pub peak_time: f64,
    /// `(t, ‖φ(t, t₀)‖)` on the integration grid.
    pub samples: Vec<(f64, f64)>,
}

/// Estimates `m_v` from the state transition matrix of `Υ̇ = -kΛM(t)Υ`,
/// integrated column by column from the identity at `t0`:
/// `m_v = max(1, max_t ‖φ(t, t₀)‖ e^{α_v (t - t₀)})`.
pub fn estimate_m_v(
    decomposition: &SpanningDecomposition,
    weights: &dyn EdgeWeights,
    k: f64,
    alpha_v: f64,
    t0: f64,
    t_end: f64,
    step: f64,
) -> Result<MvEstimate> {
    if !(step > 0.0) || !(t_end > t0) {
        return Err(Error::InvalidParameter(format!(
            "m_v estimation needs t_end > t0 and a positive step (got [{t0}, {t_end}], {step})"
        )));
    }
    let p = decomposition.p();
    let terms = reduced_edge_terms(decomposition, k);
    let m = weights.edge_count();
    let mut w = vec![0.0; m];
    let mut y: Vec<f64> = DMatrix::<f64>::identity(p, p).as_slice().to_vec();
    let mut next = vec![0.0; p * p];
    let mut scratch = vec![0.0; 5 * p * p];
    let mut samples = vec![(t0, 1.0)];
    let mut best = (1.0f64, t0);

    let breaks = weights.breakpoints(t0, t_end);
    let mut t = t0;
    for (a, b) in pieces(t0, t_end, &breaks) {
        let anchor = 0.5 * (a + b);
        let count = ((b - a) / step - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / count as f64;
        let mut rhs = |s: f64, phi: &[f64], dphi: &mut [f64]| {
            weights.eval_piece(s, anchor, &mut w);
            // dΦ = -Σ_j w_j K_j Φ, with K_j = kΛ Γᵀ r_j r_jᵀ Γ
            dphi.iter_mut().for_each(|v| *v = 0.0);
            for (term, &wj) in terms.iter().zip(&w) {
                if wj == 0.0 {
                    continue;
                }
                for col in 0..p {
                    for row in 0..p {
                        let mut acc = 0.0;
                        for q in 0..p {
                            acc += term[(row, q)] * phi[col * p + q];
                        }
                        dphi[col * p + row] -= wj * acc;
                    }
                }
            }
        };
        for i in 0..count {
            let s = a + i as f64 * h;
            rk4_step(&mut rhs, s, &y, h, &mut next, &mut scratch);
            std::mem::swap(&mut y, &mut next);
            t = if i + 1 == count { b } else { s + h };
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t });
            }
            let norm = spectral_norm(&DMatrix::from_column_slice(p, p, &y));
            samples.push((t, norm));
            let scaled = norm * (alpha_v * (t - t0)).exp();
            if scaled > best.0 {
                best = (scaled, t);
            }
        }
    }
    debug_assert!((t - t_end).abs() <= 1e-9 * t_end.abs().max(1.0));

    // still rising in the last quarter of the horizon: the rate does not hold
    let cut = t0 + 0.75 * (t_end - t0);
    let early = samples
        .iter()
        .filter(|(s, _)| *s <= cut)
        .map(|(s, n)| n * (alpha_v * (s - t0)).exp())
        .fold(1.0f64, f64::max);
    if best.1 > cut && best.0 > 1.5 * early {
        return Err(Error::TransitionGrowth { peak: best.0, t: best.1 });
    }

    Ok(MvEstimate {
        m_v: best.0.max(1.0),
        peak_time: best.1,
        samples,
    })
}

/// `kΛ Γᵀ r_j r_jᵀ Γ` for every edge `j` in the topology's original order.
fn reduced_edge_terms(dec: &SpanningDecomposition, k: f64) -> Vec<DMatrix<f64>> {
    let m = dec.permutation.len();
    let mut terms = vec![DMatrix::zeros(dec.p(), dec.p()); m];
    for (slot, &orig) in dec.permutation.iter().enumerate() {
        let g_r = dec.gamma.transpose() * dec.r.column(slot);
        let outer = &g_r * g_r.transpose();
        let scaled = DMatrix::from_fn(dec.p(), dec.p(), |i, j| k * dec.lambda[i] * outer[(i, j)]);
        terms[orig] = scaled;
    }
    terms
}

/// Rate quantities of the event-free system for one spanning tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub k: f64,
    pub tree_edges: Vec<usize>,
    pub p: usize,
    pub window: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub lambda_min: f64,
    pub lambda_norm: f64,
    pub alpha_v: f64,
    pub m_v: f64,
    pub m_v_source: MvSource,
    pub rho: f64,
    pub gamma_norm: f64,
    pub t0: f64,
    pub upsilon0_norm: f64,
    pub omega: f64,
    pub d_norm: f64,
}

/// The complete bound bundle for a certified run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBounds {
    #[serde(flatten)]
    pub rate: RateConstants,
    /// `None` for continuous (error-free) feedback.
    pub trigger: Option<TriggerSpec>,
    pub c: f64,
    pub beta: f64,
    pub error_coefficient: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    /// `ρκ₂`, the limiting radius for the static trigger.
    pub ball_radius: f64,
    /// Minimum inter-event time; `None` when nothing triggers.
    pub gamma_min: Option<f64>,
    /// Right-hand side of the inter-event equation.
    pub zeno_rhs: Option<f64>,
}

impl CertifiedBounds {
    /// `ρ(κ₁ e^{-α_v t} + κ₂ e^{-βt})`
    pub fn envelope(&self, t: f64) -> f64 {
        self.rate.rho * (self.kappa1 * (-self.rate.alpha_v * t).exp() + self.kappa2 * (-self.beta * t).exp())
    }

    /// Supremum of `κ₁ e^{-(α_v-β)t₁} + κ₂` over `t₁ ≥ t₀`.
    pub fn zeno_envelope_sup(&self) -> f64 {
        if self.kappa1 >= 0.0 {
            self.kappa1 * (-(self.rate.alpha_v - self.beta) * self.rate.t0).exp() + self.kappa2
        } else {
            self.kappa2
        }
    }
}

pub fn envelope(consts: &CertifiedBounds, t: f64) -> f64 {
    consts.envelope(t)
}

/// Minimum inter-event time for the trigger in `consts`.
pub fn zeno_bound(consts: &CertifiedBounds) -> Result<f64> {
    let trigger = consts
        .trigger
        .ok_or_else(|| Error::InvalidParameter("continuous feedback has no events".into()))?;
    let s = consts.zeno_envelope_sup();
    let denom = consts.rate.k * consts.rate.rho * consts.rate.omega * consts.rate.d_norm * s;
    if !(denom > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "zeno bound needs k ρ ω ‖D‖ (κ₁+κ₂) > 0, got {denom}"
        )));
    }
    solve_gamma(trigger.beta(), trigger.c() / denom)
}

/// How `m_v` is obtained during certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MvChoice {
    Supplied { value: f64 },
    Estimate { step: f64 },
}

/// Everything needed to certify one run.
#[derive(Clone, Copy)]
pub struct CertificationSetup<'a> {
    pub topology: &'a Topology,
    pub weights: &'a dyn EdgeWeights,
    /// `None` means continuous feedback (no broadcast error).
    pub trigger: Option<TriggerSpec>,
    pub gain: f64,
    pub x0: &'a [f64],
    pub t0: f64,
    pub pe_window: f64,
    pub pe_start: f64,
    pub pe_end: f64,
    pub pe_grid: f64,
    pub m_v: MvChoice,
}

/// Constants for one tree. `certified` is `None` when the trigger violates
/// `β < α_v`; the reason is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub pe: PeCertificate,
    pub rate: RateConstants,
    pub certified: Option<CertifiedBounds>,
    pub uncertified_reason: Option<String>,
}

impl ConstantsReport {
    pub fn is_certified(&self) -> bool {
        self.certified.is_some()
    }
}

pub fn certify(setup: &CertificationSetup<'_>, dec: &SpanningDecomposition) -> Result<ConstantsReport> {
    let topo = setup.topology;
    if setup.x0.len() != topo.node_count() {
        return Err(Error::DimensionMismatch {
            what: "x0",
            expected: topo.node_count(),
            got: setup.x0.len(),
        });
    }
    if setup.weights.edge_count() != topo.edge_count() {
        return Err(Error::DimensionMismatch {
            what: "edge weights",
            expected: topo.edge_count(),
            got: setup.weights.edge_count(),
        });
    }
    if !(setup.gain > 0.0) {
        return Err(Error::InvalidParameter(format!("gain k must be > 0, got {}", setup.gain)));
    }
    let pe = verify_pe(
        setup.weights,
        &dec.tree_edges,
        setup.pe_window,
        setup.pe_start,
        setup.pe_end,
        setup.pe_grid,
    )?;
    norm_bound(setup.weights, setup.pe_start, setup.pe_end, setup.pe_grid)?;
    let p = dec.p();
    let alpha = alpha_v(
        setup.gain,
        dec.lambda_min(),
        dec.lambda_norm(),
        p,
        pe.mu1,
        pe.mu2,
        pe.window,
    )?;
    let (m_v, m_v_source) = match setup.m_v {
        MvChoice::Supplied { value } => {
            if !(value >= 1.0) {
                return Err(Error::InvalidParameter(format!("supplied m_v must be >= 1, got {value}")));
            }
            (value, MvSource::Supplied { value })
        }
        MvChoice::Estimate { step } => {
            let est = estimate_m_v(dec, setup.weights, setup.gain, alpha, setup.t0, setup.pe_end, step)?;
            (
                est.m_v,
                MvSource::Estimated {
                    step,
                    t_end: setup.pe_end,
                    peak_time: est.peak_time,
                },
            )
        }
    };
    let rate = RateConstants {
        k: setup.gain,
        tree_edges: dec.tree_edges.clone(),
        p,
        window: pe.window,
        mu1: pe.mu1,
        mu2: pe.mu2,
        lambda_min: dec.lambda_min(),
        lambda_norm: dec.lambda_norm(),
        alpha_v: alpha,
        m_v,
        m_v_source,
        rho: dec.rho,
        gamma_norm: dec.gamma_norm,
        t0: setup.t0,
        upsilon0_norm: dec.upsilon_norm(setup.x0),
        omega: setup.weights.omega(),
        d_norm: topo.incidence_norm(),
    };

    let (c, beta) = setup.trigger.map_or((0.0, 0.0), |t| (t.c(), t.beta()));
    let coef = error_coefficient(c, p, dec.gamma_norm);
    let kappa_in = KappaInputs {
        k: setup.gain,
        lambda_norm: rate.lambda_norm,
        m_v,
        error_coefficient: coef,
        mu2: rate.mu2,
        window: rate.window,
        alpha_v: alpha,
        beta,
        t0: setup.t0,
        upsilon0_norm: rate.upsilon0_norm,
    };
    let kappas = match kappa_constants(&kappa_in) {
        Ok(k) => k,
        Err(Error::Hypothesis(reason)) => {
            return Ok(ConstantsReport {
                pe,
                rate,
                certified: None,
                uncertified_reason: Some(reason),
            })
        }
        Err(e) => return Err(e),
    };
    let mut certified = CertifiedBounds {
        rate: rate.clone(),
        trigger: setup.trigger,
        c,
        beta,
        error_coefficient: coef,
        kappa1: kappas.kappa1,
        kappa2: kappas.kappa2,
        kappa3: kappas.kappa3,
        ball_radius: rate.rho * kappas.kappa2,
        gamma_min: None,
        zeno_rhs: None,
    };
    if let Some(trigger) = setup.trigger {
        let gamma = zeno_bound(&certified)?;
        certified.zeno_rhs = Some(gamma * (trigger.beta() * gamma).exp());
        certified.gamma_min = Some(gamma);
    }
    Ok(ConstantsReport {
        pe,
        rate,
        certified: Some(certified),
        uncertified_reason: None,
    })
}

/// `κ₂` (or why it is unavailable) for one spanning tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeKappa {
    pub tree: Vec<usize>,
    pub kappa2: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalKappa2 {
    pub kappa2_min: f64,
    pub kappa2_max: f64,
    pub tree_min: Vec<usize>,
    pub tree_max: Vec<usize>,
    pub trees: Vec<TreeKappa>,
}

/// Enumerates spanning trees and certifies each one on its own edges. Trees
/// whose edges are not persistently exciting are skipped. Ties keep the
/// lexicographically first tree.
pub fn extremal_kappa2(setup: &CertificationSetup<'_>) -> Result<ExtremalKappa2> {
    let trees = setup.topology.spanning_trees(TREE_ENUMERATION_CAP)?;
    let outcomes: Vec<Result<(TreeKappa, Option<ConstantsReport>)>> = trees
        .par_iter()
        .map(|tree| {
            let dec = SpanningDecomposition::new(setup.topology, Some(tree))?;
            match certify(setup, &dec) {
                Ok(report) => {
                    let kappa2 = report.certified.as_ref().map(|t| t.kappa2);
                    let note = report.uncertified_reason.clone();
                    Ok((TreeKappa { tree: tree.clone(), kappa2, note }, Some(report)))
                }
                Err(e @ Error::NotPersistentlyExciting { .. }) | Err(e @ Error::Hypothesis(_)) => Ok((
                    TreeKappa {
                        tree: tree.clone(),
                        kappa2: None,
                        note: Some(e.to_string()),
                    },
                    None,
                )),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut entries = Vec::with_capacity(trees.len());
    let mut min: Option<(f64, Vec<usize>)> = None;
    let mut max: Option<(f64, Vec<usize>)> = None;
    for outcome in outcomes {
        let (entry, _) = outcome?;
        if let Some(k2) = entry.kappa2 {
            if min.as_ref().is_none_or(|(v, _)| k2 < *v) {
                min = Some((k2, entry.tree.clone()));
            }
            if max.as_ref().is_none_or(|(v, _)| k2 > *v) {
                max = Some((k2, entry.tree.clone()));
            }
        }
        entries.push(entry);
    }
    let ((kappa2_min, tree_min), (kappa2_max, tree_max)) = match (min, max) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Hypothesis(
                "no spanning tree yields certified constants on the tested horizon".into(),
            ))
        }
    };
    Ok(ExtremalKappa2 {
        kappa2_min,
        kappa2_max,
        tree_min,
        tree_max,
        trees: entries,
    })
}

/// Trigger label used in reports.
pub fn feedback_label(trigger: Option<TriggerSpec>) -> &'static str {
    match trigger.map(|t| t.kind()) {
        None => "continuous",
        Some(TriggerKind::Static) => "static",
        Some(TriggerKind::Dynamic) => "dynamic",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{EdgeSignal, WeightSignal};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn kin(beta: f64) -> KappaInputs {
        KappaInputs {
            k: 1.3,
            lambda_norm: 3.0,
            m_v: 1.7,
            error_coefficient: 1.2,
            mu2: 0.8,
            window: 2.0,
            alpha_v: 0.05,
            beta,
            t0: 0.5,
            upsilon0_norm: 2.0,
        }
    }

    #[test]
    fn alpha_v_examples() {
        let a = alpha_v(1.0, 1.0, 1.0, 1, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(a, 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(a, 0.346_573_590_279_972_6, epsilon = 1e-15);

        let tiny = alpha_v(1.0, 1.0, 1.0, 1, 1e-12, 1.0, 1.0).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-12);

        let doubled = alpha_v(1.0, 1.0, 1.0, 1, 1.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(doubled, a / 2.0, epsilon = 1e-15);

        assert!(alpha_v(1.0, 1.0, 1.0, 1, 0.0, 1.0, 1.0).is_err());
        // 2kλμ₁ > (1+k√p‖Λ‖μ₂)² pushes the bracket below 0
        assert!(matches!(alpha_v(1.0, 10.0, 0.01, 1, 1.0, 0.01, 1.0), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn alpha_v_encodes_window_contraction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (k, lmin, p) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..1.0), rng.gen_range(1..6));
            let lnorm = lmin + rng.gen_range(0.0..4.0);
            let mu1 = rng.gen_range(0.05..1.0);
            let mu2 = mu1 + rng.gen_range(0.0..2.0);
            let t = rng.gen_range(0.5..8.0);
            let a = alpha_v(k, lmin, lnorm, p, mu1, mu2, t).unwrap();
            let bracket = contraction_bracket(k, lmin, lnorm, p, mu1, mu2);
            assert!(((-2.0 * a * t).exp() - bracket).abs() < 1e-12);
        }
    }

    #[test]
    fn error_coefficient_examples() {
        assert_relative_eq!(error_coefficient(0.5, 3, 1.0), 3f64.sqrt(), epsilon = 1e-15);
        assert_eq!(error_coefficient(0.5, 1, 1.0), 1.0);
        assert_eq!(error_coefficient(1.0, 3, 1.0), 2.0 * error_coefficient(0.5, 3, 1.0));
    }

    #[test]
    fn kappa_static_matches_closed_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let inp = KappaInputs {
                k: rng.gen_range(0.1..5.0),
                lambda_norm: rng.gen_range(0.5..6.0),
                m_v: rng.gen_range(1.0..4.0),
                error_coefficient: rng.gen_range(0.1..3.0),
                mu2: rng.gen_range(0.1..3.0),
                window: rng.gen_range(0.5..10.0),
                alpha_v: rng.gen_range(1e-3..0.5),
                beta: 0.0,
                t0: rng.gen_range(0.0..5.0),
                upsilon0_norm: rng.gen_range(0.0..5.0),
            };
            let proof = kappa_constants(&inp).unwrap().kappa2;
            let closed = kappa2_static_closed_form(&inp);
            assert!(((proof - closed) / closed).abs() < 1e-10);
        }
    }

    #[test]
    fn kappa_unit_parameters() {
        // k = ‖Λ‖ = m_v = C = μ₂ = T = ‖Υ₀‖ = 1, t₀ = 0, α_v = ln2 / 2, β = 0:
        // e^{α_v} = √2, κ₃ = √2/(√2-1) = 2+√2, κ₂ = √2 κ₃ = 2+2√2, κ₁ = 1 - κ₃
        let inp = KappaInputs {
            k: 1.0,
            lambda_norm: 1.0,
            m_v: 1.0,
            error_coefficient: 1.0,
            mu2: 1.0,
            window: 1.0,
            alpha_v: 0.5 * 2f64.ln(),
            beta: 0.0,
            t0: 0.0,
            upsilon0_norm: 1.0,
        };
        let k = kappa_constants(&inp).unwrap();
        let r2 = 2f64.sqrt();
        assert_relative_eq!(k.kappa3, 2.0 + r2, epsilon = 1e-12);
        assert_relative_eq!(k.kappa2, 2.0 + 2.0 * r2, epsilon = 1e-12);
        assert_relative_eq!(k.kappa1, -1.0 - r2, epsilon = 1e-12);
    }

    #[test]
    fn kappa_error_free_and_hypothesis() {
        let mut inp = kin(0.01);
        inp.error_coefficient = 0.0;
        let k = kappa_constants(&inp).unwrap();
        assert_eq!((k.kappa2, k.kappa3), (0.0, 0.0));
        assert_relative_eq!(k.kappa1, (0.05f64 * 0.5).exp() * 1.7 * 2.0, epsilon = 1e-14);

        assert!(matches!(kappa_constants(&kin(0.05)), Err(Error::Hypothesis(_))));
        assert!(matches!(kappa_constants(&kin(0.2)), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn kappa3_increases_with_error_coefficient() {
        let mut prev = -1.0;
        for c in [0.1, 0.5, 1.0, 2.0] {
            let mut inp = kin(0.02);
            inp.error_coefficient = c;
            let k = kappa_constants(&inp).unwrap();
            assert!(k.kappa3 > prev);
            prev = k.kappa3;
        }
    }

    #[test]
    fn gamma_solver() {
        assert_eq!(solve_gamma(0.0, 0.01).unwrap(), 0.01);
        assert!((solve_gamma(1.0, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-12);
        let g = solve_gamma(0.06, 0.5).unwrap();
        assert!((g * (0.06 * g).exp() - 0.5).abs() < 1e-12);
        assert!(solve_gamma(0.06, 0.0).is_err());
        assert!(solve_gamma(0.06, -1.0).is_err());
    }

    fn fake_constants(beta: f64) -> CertifiedBounds {
        let rate = RateConstants {
            k: 1.0,
            tree_edges: vec![0],
            p: 1,
            window: 1.0,
            mu1: 1.0,
            mu2: 1.0,
            lambda_min: 2.0,
            lambda_norm: 2.0,
            alpha_v: 0.3,
            m_v: 1.0,
            m_v_source: MvSource::Supplied { value: 1.0 },
            rho: 1.5,
            gamma_norm: 1.0,
            t0: 0.0,
            upsilon0_norm: 1.0,
            omega: 1.0,
            d_norm: 2f64.sqrt(),
        };
        CertifiedBounds {
            rate,
            trigger: Some(TriggerSpec::dynamic(0.5, beta).unwrap()),
            c: 0.5,
            beta,
            error_coefficient: 1.0,
            kappa1: 0.7,
            kappa2: 2.0,
            kappa3: 1.0,
            ball_radius: 3.0,
            gamma_min: None,
            zeno_rhs: None,
        }
    }

    #[test]
    fn envelope_limits() {
        let dynamic = fake_constants(0.1);
        assert!(dynamic.envelope(1e4) < 1e-30);
        let stat = fake_constants(0.0);
        assert_relative_eq!(stat.envelope(1e4), stat.rate.rho * stat.kappa2, epsilon = 1e-12);
        // at t₀ = 0 the envelope is ρ(κ₁ + κ₂)
        assert_relative_eq!(stat.envelope(0.0), 1.5 * 2.7, epsilon = 1e-12);
    }

    #[test]
    fn zeno_bound_residual() {
        let c = fake_constants(0.1);
        let g = zeno_bound(&c).unwrap();
        let rhs = 0.5 / (1.0 * 1.5 * 1.0 * 2f64.sqrt() * 2.7);
        assert!((g * (0.1 * g).exp() - rhs).abs() < 1e-12);

        let mut negative = fake_constants(0.1);
        negative.kappa1 = -1.0;
        let g = zeno_bound(&negative).unwrap();
        let rhs = 0.5 / (1.5 * 2f64.sqrt() * 2.0);
        assert!((g * (0.1 * g).exp() - rhs).abs() < 1e-12);
    }

    #[test]
    fn m_v_of_scalar_exponential() {
        // 2-node graph: Λ = [2], M = w, so Υ̇ = -2kwΥ; k = 1, w = 0.5 gives rate 1
        let topo = Topology::new(2, &[(0, 1)]).unwrap();
        let dec = SpanningDecomposition::new(&topo, None).unwrap();
        let w = WeightSignal::constant(&[0.5]).unwrap();
        let est = estimate_m_v(&dec, &w, 1.0, 1.0, 0.0, 10.0, 0.01).unwrap();
        assert!((est.m_v - 1.0).abs() < 1e-9);
        assert_eq!(est.samples[0], (0.0, 1.0));
        let last = est.samples.last().unwrap();
        assert!((last.1 - (-10.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn m_v_diverges_when_rate_is_overstated() {
        let topo = Topology::new(2, &[(0, 1)]).unwrap();
        let dec = SpanningDecomposition::new(&topo, None).unwrap();
        let w = WeightSignal::constant(&[0.5]).unwrap();
        assert!(matches!(
            estimate_m_v(&dec, &w, 1.0, 1.5, 0.0, 20.0, 0.01),
            Err(Error::TransitionGrowth { .. })
        ));
    }

    #[test]
    fn m_v_matches_fine_reference() {
        // path 1-2-3 with periodic weights
        let topo = Topology::new(3, &[(0, 1), (1, 2)]).unwrap();
        let dec = SpanningDecomposition::new(&topo, None).unwrap();
        let w = WeightSignal::new(
            vec![
                EdgeSignal::Sinusoid { offset: 1.0, amplitude: 0.9, frequency: 2.0, phase: 0.0 },
                EdgeSignal::Sinusoid { offset: 0.6, amplitude: 0.5, frequency: 3.0, phase: 1.0 },
            ],
            None,
        )
        .unwrap();
        let (k, alpha, t_end, h) = (0.7, 0.05, 12.0, 0.01);
        let est = estimate_m_v(&dec, &w, k, alpha, 0.0, t_end, h).unwrap();

        // reference: dense M(t) at a 10x finer step
        let lam = DMatrix::from_diagonal(&dec.lambda);
        let f = |t: f64, phi: &DMatrix<f64>| -> DMatrix<f64> {
            -(&lam * dec.reduced_weight_matrix(&w.weights_at(t)) * phi) * k
        };
        let fine = h / 10.0;
        let steps = (t_end / fine).round() as usize;
        let mut phi = DMatrix::<f64>::identity(2, 2);
        let mut best = 1.0f64;
        for i in 0..steps {
            let t = i as f64 * fine;
            let k1 = f(t, &phi);
            let k2 = f(t + fine / 2.0, &(&phi + &k1 * (fine / 2.0)));
            let k3 = f(t + fine / 2.0, &(&phi + &k2 * (fine / 2.0)));
            let k4 = f(t + fine, &(&phi + &k3 * fine));
            phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (fine / 6.0);
            let tn = (i + 1) as f64 * fine;
            best = best.max(spectral_norm(&phi) * (alpha * tn).exp());
        }
        assert!((est.m_v - best).abs() < 1e-6, "{} vs {}", est.m_v, best);
        assert!(est.m_v >= 1.0);
    }

    #[test]
    fn extremal_on_single_tree_and_symmetric_triangle() {
        let path = Topology::new(3, &[(0, 1), (1, 2)]).unwrap();
        let w = WeightSignal::constant(&[1.0, 1.0]).unwrap();
        let x0 = [1.0, 0.0, -1.0];
        let setup = CertificationSetup {
            topology: &path,
            weights: &w,
            trigger: Some(TriggerSpec::static_trigger(0.5).unwrap()),
            gain: 1.0,
            x0: &x0,
            t0: 0.0,
            pe_window: 1.0,
            pe_start: 0.0,
            pe_end: 20.0,
            pe_grid: 0.005,
            m_v: MvChoice::Supplied { value: 1.0 },
        };
        let ex = extremal_kappa2(&setup).unwrap();
        assert_eq!(ex.kappa2_min, ex.kappa2_max);
        assert_eq!(ex.tree_min, vec![0, 1]);

        let tri = Topology::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let w = WeightSignal::constant(&[1.0, 1.0, 1.0]).unwrap();
        let setup = CertificationSetup { topology: &tri, weights: &w, ..setup };
        let ex = extremal_kappa2(&setup).unwrap();
        assert_eq!(ex.trees.len(), 3);
        assert!(((ex.kappa2_max - ex.kappa2_min) / ex.kappa2_min).abs() < 1e-10);
        // ties resolve to the lexicographically first tree
        assert_eq!(ex.tree_min, vec![0, 1]);
        assert_eq!(ex.tree_max, vec![0, 1]);
    }
}
