//! Cost/performance curves, the area metric ρ, and the two benchmarks a
//! biased mixture is compared against: single experts and random routing.

mod sweep;

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::BiasVector;
use crate::error::{Error, Result};
use crate::mixture::{split_utility, BiasMethod, MixtureModel};
use crate::nn::argmax;
use crate::seed::derive_seed;
use crate::solver::CostVector;
use crate::synth::{Dataset, Expert, Split};

pub use sweep::{
    prepare_seed, sweep, write_results_csv, CellResult, EvalReport, MethodSummary, Pipeline,
    SeedReport, SkippedTarget, Targets, RESULTS_HEADER,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BiasEnforcement,
    SoftRegularization,
    RandomSelection,
    SingleExpert,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::BiasEnforcement,
        Method::SoftRegularization,
        Method::RandomSelection,
        Method::SingleExpert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BiasEnforcement => "bias_enforcement",
            Method::SoftRegularization => "soft_regularization",
            Method::RandomSelection => "random_selection",
            Method::SingleExpert => "single_expert",
        }
    }

    /// Training method for the mixture-based entries.
    pub fn bias_method(self) -> Option<BiasMethod> {
        match self {
            Method::BiasEnforcement => Some(BiasMethod::BiasEnforcement),
            Method::SoftRegularization => Some(BiasMethod::SoftRegularization),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enforcement" | "bias_enforcement" => Ok(Method::BiasEnforcement),
            "soft" | "soft_regularization" => Ok(Method::SoftRegularization),
            "random" | "random_selection" => Ok(Method::RandomSelection),
            "single" | "single_expert" => Ok(Method::SingleExpert),
            other => Err(Error::config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub d_t: f64,
    pub realized_cost: f64,
    pub performance: f64,
    pub method: Method,
}

/// Performance against target cost for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub points: Vec<CurvePoint>,
    pub d_min: f64,
    pub d_max: f64,
    /// `None` when the curve does not span `[d_min, d_max]`.
    pub rho: Option<f64>,
}

impl RateCurve {
    /// Sorts `points` by target and computes ρ when both endpoints are
    /// present.
    pub fn new(mut points: Vec<CurvePoint>, d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite() && d_max > d_min) {
            return Err(Error::config("curve needs d_min < d_max"));
        }
        points.sort_by(|a, b| a.d_t.total_cmp(&b.d_t));
        let mut curve = Self {
            points,
            d_min,
            d_max,
            rho: None,
        };
        curve.rho = rho(&curve).ok();
        Ok(curve)
    }
}

fn near(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * scale.max(1.0)
}

/// Area under performance over normalised cost `t = (d_t − d_min)/(d_max − d_min)`
/// by the trapezoid rule.
pub fn rho(curve: &RateCurve) -> Result<f64> {
    let pts = &curve.points;
    if pts.len() < 2 {
        return Err(Error::config("rho needs at least two points"));
    }
    let (lo, hi) = (curve.d_min, curve.d_max);
    if !near(pts[0].d_t, lo, hi) || !near(pts[pts.len() - 1].d_t, hi, hi) {
        return Err(Error::config("rho needs points at both d_min and d_max"));
    }
    let t = |d: f64| ((d - lo) / (hi - lo)).clamp(0.0, 1.0);
    Ok(pts
        .windows(2)
        .map(|w| (t(w[1].d_t) - t(w[0].d_t)) * 0.5 * (w[0].performance + w[1].performance))
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertPoint {
    pub id: usize,
    pub cost: f64,
    pub performance: f64,
}

/// Every expert evaluated alone on the test split.
pub fn single_expert_baseline(experts: &[Expert], dataset: &Dataset) -> Result<Vec<ExpertPoint>> {
    experts
        .iter()
        .map(|e| {
            Ok(ExpertPoint {
                id: e.id,
                cost: e.cost_bytes as f64,
                performance: e.accuracy(dataset, Split::Test)?,
            })
        })
        .collect()
}

/// Piecewise-linear interpolation through the standalone expert points.
/// Experts sharing a cost contribute their best performance.
pub fn interpolate_benchmark(points: &[ExpertPoint], d_t: f64) -> Result<f64> {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    for p in sorted {
        match pts.last_mut() {
            Some(last) if last.0 == p.cost => last.1 = last.1.max(p.performance),
            _ => pts.push((p.cost, p.performance)),
        }
    }
    let (first, last) = match (pts.first(), pts.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::config("no expert points to interpolate")),
    };
    let tol = 1e-9 * last.0.abs().max(1.0);
    if d_t < first.0 - tol || d_t > last.0 + tol {
        return Err(Error::config(format!(
            "target {d_t} outside the expert cost range [{}, {}]",
            first.0, last.0
        )));
    }
    if d_t <= first.0 {
        return Ok(first.1);
    }
    for w in pts.windows(2) {
        let ((c0, p0), (c1, p1)) = (w[0], w[1]);
        if d_t <= c1 {
            return Ok(p0 + (p1 - p0) * (d_t - c0) / (c1 - c0));
        }
    }
    Ok(last.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub mean: f64,
    pub sd: f64,
    pub realized_cost: f64,
    pub trials: usize,
}

/// Routes every test input to expert `n` with probability `b_n`.
pub fn random_selection_baseline(
    experts: &[Expert],
    dataset: &Dataset,
    b: &BiasVector,
    seed: u64,
    trials: usize,
) -> Result<RandomBaseline> {
    if b.len() != experts.len() {
        return Err(Error::dim("bias vector", experts.len(), b.len()));
    }
    if trials == 0 {
        return Err(Error::config("trials must be at least 1"));
    }
    let idx = dataset.indices(Split::Test);
    if idx.is_empty() {
        return Err(Error::EmptyBatch);
    }
    // correct[n][k]: expert n right on the k-th test input
    let support = b.support();
    let mut correct = vec![Vec::new(); experts.len()];
    for &n in &support {
        correct[n] = idx
            .iter()
            .map(|&i| {
                let ex = &dataset.examples[i];
                Ok(argmax(&experts[n].predict(&ex.x)?) == ex.y)
            })
            .collect::<Result<Vec<bool>>>()?;
    }
    let dist = WeightedIndex::new(b.values()).map_err(|e| Error::InvalidBias(e.to_string()))?;
    let m = idx.len() as f64;
    let mut accs = Vec::with_capacity(trials);
    let mut cost = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        let mut hits = 0usize;
        #[allow(clippy::needless_range_loop)] // the row changes per draw
        for k in 0..idx.len() {
            let n = dist.sample(&mut rng);
            hits += usize::from(correct[n][k]);
            cost += experts[n].cost_bytes as f64;
        }
        accs.push(hits as f64 / m);
    }
    let mean = accs.iter().sum::<f64>() / trials as f64;
    let sd = if trials > 1 {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RandomBaseline {
        mean,
        sd,
        realized_cost: cost / (m * trials as f64),
        trials,
    })
}

/// `||u − b||₁` with `u` the soft-gate utility over the test split.
pub fn utility_deviation(model: &MixtureModel, dataset: &Dataset) -> Result<f64> {
    let u = split_utility(model, dataset, Split::Test)?;
    Ok(u.values()
        .iter()
        .zip(model.bias.values())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// `{d_max, (d_min+d_max)/2, d_max/2, d_max/3, d_min}` restricted to
/// `[d_min, d_max]`, ascending and deduplicated.
pub fn default_targets(d: &CostVector) -> Vec<f64> {
    let (lo, hi) = (d.min(), d.max());
    let mut t: Vec<f64> = [hi, 0.5 * (lo + hi), hi / 2.0, hi / 3.0, lo]
        .into_iter()
        .filter(|&x| x >= lo && x <= hi)
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup_by(|a, b| near(*a, *b, hi));
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, DenseNet};
    use crate::synth::{gen_feature_task, FeatureTaskConfig, InputShape, PreprocessSpec};

    fn curve(points: &[(f64, f64)]) -> RateCurve {
        RateCurve::new(
            points
                .iter()
                .map(|&(d, p)| CurvePoint {
                    d_t: d,
                    realized_cost: d,
                    performance: p,
                    method: Method::BiasEnforcement,
                })
                .collect(),
            0.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn rho_of_constant_curve() {
        let c = curve(&[(0.0, 0.8), (0.3, 0.8), (1.0, 0.8)]);
        assert!((c.rho.unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rho_of_linear_curve() {
        let c = curve(&[(1.0, 0.8), (0.0, 0.6)]);
        assert!((c.rho.unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn rho_of_three_points() {
        let c = curve(&[(0.0, 0.6), (0.5, 0.8), (1.0, 0.8)]);
        assert!((c.rho.unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rho_uses_normalised_cost() {
        let pts = [(120.0, 0.6), (490.0, 0.7), (1080.0, 0.9)];
        let c = RateCurve::new(
            pts.iter()
                .map(|&(d, p)| CurvePoint {
                    d_t: d,
                    realized_cost: d,
                    performance: p,
                    method: Method::SingleExpert,
                })
                .collect(),
            120.0,
            1080.0,
        )
        .unwrap();
        let t = (490.0 - 120.0) / 960.0;
        let expect = t * 0.65 + (1.0 - t) * 0.8;
        assert!((c.rho.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn rho_requires_endpoints() {
        let c = curve(&[(0.0, 0.6), (0.5, 0.8)]);
        assert!(c.rho.is_none());
        assert!(rho(&curve(&[(0.0, 0.6)])).is_err());
    }

    #[test]
    fn benchmark_interpolation() {
        let pts = vec![
            ExpertPoint {
                id: 0,
                cost: 100.0,
                performance: 0.5,
            },
            ExpertPoint {
                id: 1,
                cost: 300.0,
                performance: 0.9,
            },
        ];
        assert_eq!(interpolate_benchmark(&pts, 100.0).unwrap(), 0.5);
        assert_eq!(interpolate_benchmark(&pts, 300.0).unwrap(), 0.9);
        assert!((interpolate_benchmark(&pts, 200.0).unwrap() - 0.7).abs() < 1e-12);
        assert!(interpolate_benchmark(&pts, 50.0).is_err());
    }

    #[test]
    fn default_grid_is_clipped_and_deduplicated() {
        let d = CostVector::new(vec![4.0, 8.0]).unwrap();
        assert_eq!(default_targets(&d), vec![4.0, 6.0, 8.0]);
        let d = CostVector::new(vec![120_000.0, 270_000.0, 1_080_000.0]).unwrap();
        assert_eq!(
            default_targets(&d),
            vec![120_000.0, 360_000.0, 540_000.0, 600_000.0, 1_080_000.0]
        );
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), m.name());
        }
        assert_eq!(
            "soft".parse::<Method>().unwrap(),
            Method::SoftRegularization
        );
        assert!("best".parse::<Method>().is_err());
    }

    /// Expert that always predicts `class`.
    fn fixed_expert(id: usize, cost_dims: Vec<usize>, class: usize, classes: usize) -> Expert {
        let k = cost_dims.len();
        let w = vec![vec![0.0; k]; classes];
        let mut b = vec![0.0; classes];
        b[class] = 5.0;
        let net = DenseNet::new(vec![Dense::new(w, b, Activation::Identity).unwrap()]).unwrap();
        let spec = PreprocessSpec::feature_mask(cost_dims);
        Expert {
            id,
            cost_bytes: spec.cost_bytes(),
            preprocess: spec,
            source_shape: InputShape::Features { dim: 2 },
            net,
            val_performance: 0.5,
        }
    }

    #[test]
    fn one_hot_random_selection_equals_the_expert() {
        let d = gen_feature_task(&FeatureTaskConfig::default(), 4).unwrap();
        let experts = vec![
            fixed_expert(0, vec![0], 4, 6),
            fixed_expert(1, vec![0, 1], 5, 6),
        ];
        let single = single_expert_baseline(&experts, &d).unwrap();
        let r = random_selection_baseline(&experts, &d, &BiasVector::one_hot(2, 1).unwrap(), 3, 7)
            .unwrap();
        assert_eq!(r.mean, single[1].performance);
        assert_eq!(r.sd, 0.0);
        assert_eq!(r.realized_cost, 8.0);
    }

    #[test]
    fn random_selection_averages_accuracies() {
        let d = gen_feature_task(&FeatureTaskConfig::default(), 4).unwrap();
        let experts = vec![
            fixed_expert(0, vec![0], 4, 6),
            fixed_expert(1, vec![0, 1], 5, 6),
        ];
        let single = single_expert_baseline(&experts, &d).unwrap();
        let b = BiasVector::new(vec![0.5, 0.5]).unwrap();
        let r = random_selection_baseline(&experts, &d, &b, 11, 200).unwrap();
        let expect = 0.5 * (single[0].performance + single[1].performance);
        let se = r.sd / (r.trials as f64).sqrt();
        assert!(
            (r.mean - expect).abs() <= 3.0 * se.max(1e-3),
            "{} vs {}",
            r.mean,
            expect
        );
        assert!((r.realized_cost - 6.0).abs() < 0.1);
    }

    #[test]
    fn more_trials_shrink_the_spread_of_the_mean() {
        let d = gen_feature_task(&FeatureTaskConfig::default(), 6).unwrap();
        let experts = vec![
            fixed_expert(0, vec![0], 4, 6),
            fixed_expert(1, vec![0, 1], 5, 6),
        ];
        let b = BiasVector::new(vec![0.5, 0.5]).unwrap();
        let spread = |trials: usize| {
            let means: Vec<f64> = (0..30)
                .map(|s| {
                    random_selection_baseline(&experts, &d, &b, s, trials)
                        .unwrap()
                        .mean
                })
                .collect();
            let mu = means.iter().sum::<f64>() / 30.0;
            (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / 29.0).sqrt()
        };
        assert!(spread(20) < spread(5));
    }
}
