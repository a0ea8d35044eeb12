//! Central-difference gradient checking against the tape.
//!
//! The checker treats the loss as a black box over a [`ParamStore`]: one
//! tape pass collects analytic gradients, then each probed coordinate is
//! wiggled by ±eps and the symmetric difference quotient is compared under
//! the scale-aware relative error
//! `|g_ad − g_fd| / max(1, |g_ad|, |g_fd|)`.
//!
//! The loss closure must be deterministic (fix any dropout seed or disable
//! dropout); 64-bit elements are strongly recommended — 32-bit rounding
//! swamps the difference quotient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Element, ParamStore, Result, Tape, Tensor, TensorError};

/// Probe settings for [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct FdConfig {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Cap on probed coordinates; when the parameter space is larger, a
    /// seeded sample is drawn with at least one coordinate per parameter.
    pub max_coords: usize,
    /// Seed for the coordinate sample.
    pub seed: u64,
    /// Relative-error threshold [`FdReport::passed`] tests against.
    pub tolerance: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            eps: 1e-5,
            max_coords: 400,
            seed: 0,
            tolerance: 1e-5,
        }
    }
}

/// Worst coordinate seen during a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct WorstCoord {
    pub param: String,
    pub flat_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<WorstCoord>,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

impl std::fmt::Display for FdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "checked {} coordinates, max relative error {:.3e} (tolerance {:.1e})",
            self.coords_checked, self.max_rel_err, self.tolerance
        )?;
        if let Some(w) = &self.worst {
            write!(
                f,
                "; worst at {}[{}]: analytic {:.6e} vs numeric {:.6e}",
                w.param, w.flat_index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` receives a parameter store and must return a scalar loss (any
/// displayable error type works); it is called once with tracked parameters
/// (tape pass) and twice per probed coordinate with plain ones.
///
/// # Errors
/// * whatever `loss_fn` itself raises,
/// * numeric error when a probe produces a non-finite loss (message names
///   the offending parameter).
pub fn finite_diff_check<E: Element, X: std::fmt::Display>(
    params: &ParamStore<E>,
    loss_fn: impl Fn(&ParamStore<E>) -> std::result::Result<Tensor<E>, X>,
    cfg: &FdConfig,
) -> Result<FdReport> {
    let loss_fn = |p: &ParamStore<E>| -> Result<Tensor<E>> {
        loss_fn(p).map_err(|e| TensorError::InvalidArgument {
            op: "finite_diff_check",
            detail: format!("loss: {e}"),
        })
    };
    // Analytic pass.
    let tape: Tape<E> = Tape::new();
    let watched = params.watch_all(&tape);
    let loss = loss_fn(&watched)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<(String, Tensor<E>)> = watched
        .iter()
        .map(|(name, t)| (name.to_string(), grads.wrt_or_zeros(t)))
        .collect();

    // Coordinate selection: everything if small, else a seeded sample that
    // still touches every parameter at least once.
    let sizes: Vec<usize> = params.iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut coords: Vec<(usize, usize)> = Vec::new();
    if total <= cfg.max_coords {
        for (pi, len) in sizes.iter().enumerate() {
            for j in 0..*len {
                coords.push((pi, j));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (pi, len) in sizes.iter().enumerate() {
            if *len == 0 {
                continue;
            }
            let want = ((cfg.max_coords * len) / total).max(1).min(*len);
            let mut idx: Vec<usize> = (0..*len).collect();
            idx.shuffle(&mut rng);
            for j in idx.into_iter().take(want) {
                coords.push((pi, j));
            }
        }
    }

    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut probe = params.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst: Option<WorstCoord> = None;

    for (pi, j) in &coords {
        let name = &names[*pi];
        let base = params.get(name).expect("name from this store");
        let x0 = base.data()[*j].to_f64();

        let eval_at = |x: f64, probe: &mut ParamStore<E>| -> Result<f64> {
            let mut data = base.data().to_vec();
            data[*j] = E::from_f64(x);
            probe.set(name, Tensor::from_vec(base.shape(), data)?)?;
            let v = loss_fn(probe)?.item()?.to_f64();
            if !v.is_finite() {
                return Err(TensorError::NonFinite {
                    op: "finite_diff_check",
                    detail: format!("probe loss at {name}[{j}]"),
                });
            }
            Ok(v)
        };
        let f_plus = eval_at(x0 + cfg.eps, &mut probe)?;
        let f_minus = eval_at(x0 - cfg.eps, &mut probe)?;
        probe.set(name, base.clone())?;

        let g_fd = (f_plus - f_minus) / (2.0 * cfg.eps);
        let g_ad = analytic[*pi].1.data()[*j].to_f64();
        let rel = (g_ad - g_fd).abs() / 1.0f64.max(g_ad.abs()).max(g_fd.abs());
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = Some(WorstCoord {
                param: name.clone(),
                flat_index: *j,
                analytic: g_ad,
                numeric: g_fd,
            });
        }
    }

    Ok(FdReport {
        coords_checked: coords.len(),
        max_rel_err,
        worst,
        tolerance: cfg.tolerance,
    })
}
