//! The experiment subcommands. Each returns tables and named checks; the
//! runner writes them out.

use std::cell::OnceCell;
use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sobolev_lab::cavity::{
    self, cavity_energy_report, extract_cavity, glued_cavitation, isoperimetric_ratio, lsc_perimeter_demo, oscillating_subgraphs, perimeter, point_cavities,
    radial_cavitation, set_metrics, CavityField, GridSet,
};
use sobolev_lab::composite::{build_f_tilde, cauchy_difference, fixed_point_check, lusin_report, CompositeMap};
use sobolev_lab::energy::{build_orlicz, check_orlicz, composite_energy, moduli_at, moved_set, MovedSet};
use sobolev_lab::homeo::{bilip_estimate, build_g, build_l, face_points, frame_comparability, round_trip_check, uniform_point, Homeo};
use sobolev_lab::quad::AdaptiveOptions;
use sobolev_lab::squeeze::{autotune_widths, build_squeeze, squeeze_energy, QuadOrders, TuneOptions, TuneOutcome};
use sobolev_lab::tentacle::{verify_nesting, TentacleForest, TentacleParams};
use sobolev_lab::{CantorSystem, Dyadic, Family};

use crate::config::{ConfigError, ExperimentConfig, Widths};
use crate::output::{f, u, Check, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Geometry,
    Maps,
    Tentacles,
    Lusin,
    Cauchy,
    Energy,
    Orlicz,
    PerimeterDemo,
    CavityDemo,
    All,
}

impl Command {
    pub const EACH: [Command; 9] = [
        Command::Geometry,
        Command::Maps,
        Command::Tentacles,
        Command::Lusin,
        Command::Cauchy,
        Command::Energy,
        Command::Orlicz,
        Command::PerimeterDemo,
        Command::CavityDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Geometry => "geometry",
            Command::Maps => "maps",
            Command::Tentacles => "tentacles",
            Command::Lusin => "lusin",
            Command::Cauchy => "cauchy",
            Command::Energy => "energy",
            Command::Orlicz => "orlicz",
            Command::PerimeterDemo => "perimeter-demo",
            Command::CavityDemo => "cavity-demo",
            Command::All => "all",
        }
    }
}

/// Exit 2 for input the run cannot accept, exit 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "invalid configuration: {m}"),
            Failure::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<sobolev_lab::Error> for Failure {
    fn from(e: sobolev_lab::Error) -> Self {
        use sobolev_lab::Error as E;
        match e {
            E::TooCoarse { .. } | E::GenerationCap { .. } | E::InvalidSystem(_) | E::InvalidArgument(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type Res<T> = std::result::Result<T, Failure>;

#[derive(Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    /// extra artifacts: file name and content
    pub files: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Shared, lazily built state for one run.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub sys: CantorSystem,
    tune: OnceCell<Option<TuneOutcome>>,
    forest: OnceCell<TentacleForest>,
    maps: OnceCell<Vec<CompositeMap>>,
    moved: OnceCell<Vec<MovedSet>>,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Res<Self> {
        Ok(Context { cfg, sys: cfg.system()?, tune: OnceCell::new(), forest: OnceCell::new(), maps: OnceCell::new(), moved: OnceCell::new() })
    }

    fn opts(&self) -> AdaptiveOptions {
        AdaptiveOptions { rel_tol: self.cfg.rel_tol, max_boxes: self.cfg.max_boxes, ..Default::default() }
    }

    fn tune(&self) -> Res<&Option<TuneOutcome>> {
        if self.tune.get().is_none() {
            let t = match self.cfg.widths {
                Widths::Seeded => None,
                Widths::Tuned => Some(autotune_widths(self.cfg.k, &self.sys, TuneOptions::default())?),
            };
            let _ = self.tune.set(t);
        }
        Ok(self.tune.get().expect("set above"))
    }

    pub fn params(&self) -> Res<TentacleParams> {
        Ok(match self.tune()? {
            Some(t) => t.params.clone(),
            None => TentacleParams::seeded(&self.sys, self.cfg.k)?,
        })
    }

    pub fn forest(&self) -> Res<&TentacleForest> {
        if self.forest.get().is_none() {
            let _ = self.forest.set(TentacleForest::build(&self.params()?)?);
        }
        Ok(self.forest.get().expect("set above"))
    }

    /// f̃_0, …, f̃_K
    pub fn maps(&self) -> Res<&[CompositeMap]> {
        if self.maps.get().is_none() {
            let forest = self.forest()?;
            let m = (0..=self.cfg.k).map(|k| build_f_tilde(k, forest)).collect::<sobolev_lab::Result<Vec<_>>>()?;
            let _ = self.maps.set(m);
        }
        Ok(self.maps.get().expect("set above"))
    }

    /// moved sets of f̃_1, …, f̃_K
    pub fn moved(&self) -> Res<&[MovedSet]> {
        if self.moved.get().is_none() {
            let opts = self.opts();
            let m = self.maps()?[1..].iter().map(|f| moved_set(f, opts)).collect::<sobolev_lab::Result<Vec<_>>>()?;
            let _ = self.moved.set(m);
        }
        Ok(self.moved.get().expect("set above"))
    }

    pub fn run(&self, cmd: Command) -> Res<Outcome> {
        match cmd {
            Command::Geometry => self.geometry(),
            Command::Maps => self.maps_cmd(),
            Command::Tentacles => self.tentacles(),
            Command::Lusin => self.lusin(),
            Command::Cauchy => self.cauchy(),
            Command::Energy => self.energy(),
            Command::Orlicz => self.orlicz(),
            Command::PerimeterDemo => self.perimeter_demo(),
            Command::CavityDemo => self.cavity_demo(),
            Command::All => {
                let mut all = Outcome::default();
                for c in Command::EACH {
                    let o = self.run(c)?;
                    all.tables.extend(o.tables);
                    all.checks.extend(o.checks.into_iter().map(|mut ch| {
                        ch.name = format!("{}/{}", c.name(), ch.name);
                        ch
                    }));
                    all.files.extend(o.files);
                    all.warnings.extend(o.warnings);
                }
                Ok(all)
            }
        }
    }

    fn geometry(&self) -> Res<Outcome> {
        let sys = &self.sys;
        let n = sys.n as u32;
        let mut out = Outcome::default();
        let mut vol = Table::new(
            "volumes",
            "generation volumes of the Cantor families against the closed forms 2^n alpha_k^n (C_A) and 2^n beta_k^n (C_B, tower)",
            &[
                ("k", "generation"),
                ("family", "A: Cantor set C_A, B: target set C_B, tower: Cantor tower"),
                ("cubes", "number of generation-k cubes, 2^(nk)"),
                ("generation_volume", "sum of generation-k cube volumes, from the cube radii"),
                ("generation_volume_exact", "the same sum as an exact dyadic fraction"),
                ("closed_form_exact", "2^n alpha_k^n or 2^n beta_k^n as an exact dyadic fraction"),
                ("frame_volume", "volume of one frame Q'\\Q of generation k (empty at k = 0)"),
            ],
        )
        .with_plot(0, &[3], true);
        let mut exact = true;
        for k in 0..=self.cfg.k {
            for (family, name) in [(Family::A, "A"), (Family::B, "B"), (Family::Tower, "tower")] {
                let g = sys.generation_volume(k, family)?;
                let base = if family == Family::A { sys.alpha(k) } else { sys.beta_seq(k) };
                let closed = Dyadic::int(2).powi(n) * base.powi(n);
                exact &= g == closed;
                let frame = if k == 0 { String::new() } else { f(sys.frame_volume(k, family)?.to_f64()) };
                vol.push(vec![
                    u(k),
                    name.into(),
                    format!("{}", 1u128 << (sys.n * k)),
                    f(g.to_f64()),
                    g.to_fraction_string(),
                    closed.to_fraction_string(),
                    frame,
                ]);
            }
        }
        out.checks.push(Check::new("generation_volume_exact", exact, "sum of cube volumes equals the closed form in dyadic arithmetic"));
        let mut seq = Table::new(
            "sequences",
            "construction sequences",
            &[
                ("k", "generation"),
                ("alpha_k", "(1 + 2^(-k beta))/2, half-side scale of C_A"),
                ("beta_k", "2^(-k beta), half-side scale of C_B"),
                ("r_k", "radius of a generation-k cube of C_A"),
                ("r_hat_k", "radius of a generation-k tower cube, 2^(-k) beta_k"),
                ("delta_k", "squeeze energy budget 2^(-k beta (2n-1))/k^2 (empty at k = 0)"),
            ],
        );
        for k in 0..=self.cfg.k {
            let delta = if k == 0 { String::new() } else { f(sobolev_lab::tentacle::energy_budget(k, sys)) };
            seq.push(vec![u(k), f(sys.alpha(k).to_f64()), f(sys.beta_seq(k).to_f64()), f(sys.radius_f(Family::A, k, false)), f(sys.r_hat_f(k)), delta]);
        }
        out.tables = vec![vol, seq];
        Ok(out)
    }

    fn maps_cmd(&self) -> Res<Outcome> {
        let cfg = self.cfg;
        let (n, kk) = (self.sys.n, cfg.k);
        let mut out = Outcome::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let pts: Vec<_> = (0..cfg.samples).map(|_| uniform_point(n, &mut rng)).collect();
        let faces = face_points(&self.sys, kk, (cfg.samples / 10).max(1), cfg.seed.wrapping_add(1))?;
        let g = build_g(kk, &self.sys)?;
        let l = build_l(kk, &self.sys)?;
        let h = build_squeeze(kk, self.forest()?)?;
        let ft = &self.maps()?[kk];
        let mut t = Table::new(
            "maps",
            "round trips, jacobian sign and face continuity of g_K, L_K, h_K and the composite f~_K",
            &[
                ("map", "map label"),
                ("samples", "uniform points in [-1,1]^n"),
                ("forward_error", "max |f^-1(f(x)) - x| (sup norm)"),
                ("backward_error", "max |f(f^-1(y)) - y| (sup norm)"),
                ("min_jacobian", "smallest J_f seen, samples and face points"),
                ("face_points", "points on cube and frame faces, each probed along every axis"),
                ("jumps", "face probes where |f(x+te)-f(x-te)| exceeds 2t|Df| + 1e-10"),
            ],
        );
        for m in [&g as &dyn Homeo, &l, &h, ft] {
            let r = round_trip_check(m, &pts, &faces, 1e-12)?;
            out.checks.push(Check::new(&format!("round_trip_{}", r.label), r.max_error() <= 1e-10, format!("max error {:e} (target 1e-10)", r.max_error())));
            out.checks.push(Check::new(&format!("jacobian_positive_{}", r.label), r.min_jacobian > 0.0, format!("min {:e}", r.min_jacobian)));
            out.checks.push(Check::new(&format!("face_continuity_{}", r.label), r.jumps == 0, format!("{} jumps", r.jumps)));
            t.push(vec![r.label, u(r.samples), f(r.forward_error), f(r.backward_error), f(r.min_jacobian), u(r.face_points), u(r.jumps)]);
        }
        out.tables.push(t);

        let mut fr = Table::new(
            "frames",
            "derivative size of g_k on generation-k frames against max{beta_k/alpha_k, dbeta/dalpha} and (dbeta/dalpha)(beta_k/alpha_k)^(n-1); factors are worst two-sided ratios",
            &[
                ("k", "generation"),
                ("frames", "frames sampled"),
                ("samples", "points sampled"),
                ("norm_factor", "|Dg| (operator norm) against the frame expression"),
                ("jac_factor", "J_g against the frame expression"),
                ("inv_norm_factor", "|Dg^-1| against max{alpha_k/beta_k, dalpha/dbeta}"),
                ("inv_jac_factor", "J_(g^-1) against the reciprocal jacobian expression"),
            ],
        )
        .with_plot(0, &[3, 4, 5, 6], true);
        let (mut norm_ok, mut inv_ok, mut jac_ok) = (true, true, true);
        let cap = 4f64.powi(n as i32);
        for k in 1..=kk {
            let r = frame_comparability(&self.sys, k, 16, cfg.seed)?;
            norm_ok &= r.norm_factor <= 4.0;
            inv_ok &= r.inv_norm_factor <= 4.0;
            jac_ok &= r.jac_factor <= cap && r.inv_jac_factor <= cap;
            fr.push(vec![u(k), u(r.frames), u(r.samples), f(r.norm_factor), f(r.jac_factor), f(r.inv_norm_factor), f(r.inv_jac_factor)]);
        }
        out.checks.push(Check::new("frame_derivative_within_4", norm_ok, "operator norm of Dg within factor 4"));
        out.checks.push(Check::new("frame_inverse_derivative_within_4", inv_ok, "operator norm of Dg^-1 within factor 4"));
        out.checks.push(Check::new("frame_jacobian_within_4^n", jac_ok, format!("J_g and J_(g^-1) within factor {cap}")));
        out.tables.push(fr);

        let mut bl = Table::new(
            "bilip",
            "empirical Lipschitz bounds of the tower map L_k (should stay bounded in k)",
            &[("k", "generation"), ("lower", "min |L(x)-L(y)|/|x-y|"), ("upper", "max |L(x)-L(y)|/|x-y|"), ("ratio", "upper/lower")],
        )
        .with_plot(0, &[3], false);
        let pairs = (cfg.samples / 5).max(2);
        for k in 1..=kk {
            let b = bilip_estimate(&build_l(k, &self.sys)?, pairs, cfg.seed)?;
            bl.push(vec![u(k), f(b.lower), f(b.upper), f(b.ratio())]);
        }
        out.tables.push(bl);

        let mut fp = Table::new(
            "fixed_points",
            "f~_k is the identity on the cube boundary, at Cantor centers, on generation-k cube boundaries and off the squeeze supports",
            &[("k", "generation"), ("checked", "points checked"), ("violations", "points moved by more than 1e-10"), ("max_error", "max |f~_k(x) - x|")],
        );
        let mut fixed = true;
        for m in self.maps()? {
            let r = fixed_point_check(m, (cfg.samples / 20).max(1), cfg.seed)?;
            fixed &= r.violations == 0;
            fp.push(vec![u(m.k), u(r.checked), u(r.violations), f(r.max_error)]);
        }
        out.checks.push(Check::new("fixed_points", fixed, "no point moved by more than 1e-10"));
        out.tables.push(fp);
        Ok(out)
    }

    fn tentacles(&self) -> Res<Outcome> {
        let mut out = Outcome::default();
        let params = self.params()?;
        let forest = self.forest()?;
        let q = (self.sys.n - 1) as f64;
        let mut t = Table::new(
            "tentacles",
            "tentacle widths and the squeeze energy of h_k over its support M_k against the budget delta_k",
            &[
                ("k", "generation"),
                ("d", "tentacle half-width d_k"),
                ("b", "core half-width b_k = d_k/2"),
                ("a", "axis length a_k"),
                ("c", "axis length c_k"),
                ("delta", "budget 2^(-k beta (2n-1))/k^2"),
                ("energy", "integral of |Dh_k|^(n-1) over M_k"),
                ("energy_error", "difference between quadrature orders"),
                ("budget_met", "energy <= delta"),
            ],
        )
        .with_plot(0, &[5, 6], true);
        let mut met = true;
        for g in &params.gens {
            let (e, err) = match (g.measured_energy, g.energy_error) {
                (Some(e), Some(err)) => (e, err),
                _ => {
                    let r = squeeze_energy(&build_squeeze(g.k, forest)?, q, QuadOrders::default());
                    (r.value, r.error)
                }
            };
            met &= e <= g.delta;
            t.push(vec![u(g.k), f(g.d.to_f64()), f(g.b.to_f64()), f(g.a.to_f64()), f(g.c.to_f64()), f(g.delta), f(e), f(err), (e <= g.delta).to_string()]);
        }
        out.tables.push(t);
        if let Some(tune) = self.tune()? {
            let mut s = Table::new(
                "tune_steps",
                "width search: each row is one trial width and its squeeze energy",
                &[("k", "generation"), ("d", "trial half-width"), ("energy", "integral of |Dh_k|^(n-1) over M_k"), ("error", "quadrature order difference")],
            );
            for st in &tune.steps {
                s.push(vec![u(st.k), f(st.d.to_f64()), f(st.energy), f(st.error)]);
            }
            out.tables.push(s);
        }
        let v = params.violations();
        out.checks.push(Check::new(
            "width_constraints",
            v.is_empty(),
            if v.is_empty() { "0 < b < d < a < c, d_k < r_hat_k, b_k < 8^-k, d_k < 4^n b_(k-1)".into() } else { v.join("; ") },
        ));
        let r = params.routing_violations();
        out.checks.push(Check::new("lane_routing", r.is_empty(), if r.is_empty() { "children fit in the parent lanes".into() } else { r.join("; ") }));
        let nest = verify_nesting(forest, self.cfg.k.min(2))?;
        out.checks.push(Check::new(
            "nesting",
            nest.violations.is_empty(),
            format!("{} parent pairs, {} sibling pairs, {} violations", nest.checked_pairs, nest.checked_sibling_pairs, nest.violations.len()),
        ));
        out.checks.push(Check::new("squeeze_budget", met, "integral of |Dh_k|^(n-1) over M_k <= delta_k for every k"));
        Ok(out)
    }

    fn lusin(&self) -> Res<Outcome> {
        let mut out = Outcome::default();
        let mut t = Table::new(
            "lusin_report",
            "Lusin (N) failure: the tentacle sets shrink while their images under the inverse composite cover the Cantor cubes",
            &[
                ("k", "generation"),
                ("upsilon", "|Upsilon_k|, measure of the tower-side tentacles"),
                ("image", "|f~_k(Upsilon_k)| pulled back to C_A"),
                ("ratio", "image/upsilon"),
                ("generation_volume", "2^n alpha_k^n, volume of the generation-k cubes of C_A"),
                ("head_image", "part of image from the heads"),
                ("body_image", "part of image from the straight tentacle boxes"),
                ("body_error", "quadrature order difference on the boxes"),
            ],
        )
        .with_plot(0, &[1, 2, 3], true);
        let mut rows = Vec::new();
        for m in &self.maps()?[1..] {
            let r = lusin_report(m, self.cfg.lusin_resolution, 1e-3)?;
            t.push(vec![u(r.k), f(r.upsilon), f(r.image), f(r.ratio), f(r.generation_volume), f(r.head_image), f(r.body_image), f(r.body_error)]);
            rows.push(r);
        }
        let halves = rows.windows(2).all(|w| w[1].upsilon <= w[0].upsilon / 2.0);
        let covers = rows.iter().all(|r| r.image >= r.generation_volume - 0.02);
        let rising = rows.windows(2).all(|w| w[1].ratio > w[0].ratio);
        out.checks.push(Check::new("upsilon_halves", halves, "|Upsilon_(k+1)| <= |Upsilon_k|/2"));
        out.checks.push(Check::new("image_covers_cantor_cubes", covers, "image >= 2^n alpha_k^n - 0.02"));
        out.checks.push(Check::new("ratio_increasing", rising, "image/upsilon strictly increasing"));
        out.tables.push(t);
        Ok(out)
    }

    fn cauchy(&self) -> Res<Outcome> {
        let mut out = Outcome::default();
        let maps = self.maps()?;
        let q = (self.sys.n - 1) as f64;
        let mut t = Table::new(
            "cauchy",
            "increments of the composite: k^2 times the integral of |Df~_k - Df~_(k-1)|^(n-1), over the set where they differ",
            &[
                ("k", "generation"),
                ("value", "integral of |Df~_k - Df~_(k-1)|^(n-1)"),
                ("error", "adaptive quadrature error estimate"),
                ("k2_value", "k^2 * value"),
                ("support_measure", "|S_k|, the preimage of M_k"),
                ("image_measure", "integral of J over S_k, equal to |S_k|"),
                ("measure_error", "quadrature error of the two measures"),
                ("boxes", "adaptive leaves"),
                ("converged", "error below rel_tol before the box cap"),
            ],
        )
        .with_plot(0, &[3], true);
        let mut rows = Vec::new();
        for k in 1..=self.cfg.k {
            let r = cauchy_difference(&maps[k], &maps[k - 1], q, self.opts())?;
            t.push(vec![
                u(k),
                f(r.value),
                f(r.error),
                f(r.k2_value),
                f(r.support_measure),
                f(r.image_measure),
                f(r.measure_error),
                u(r.boxes),
                r.converged.to_string(),
            ]);
            if !r.converged {
                out.warnings.push(format!("cauchy k={k}: quadrature stopped at {} boxes above rel_tol", r.boxes));
            }
            rows.push(r);
        }
        let viol: Vec<usize> = rows
            .windows(2)
            .filter(|w| w[0].k >= 2)
            .filter(|w| {
                let slack = (w[0].k * w[0].k) as f64 * w[0].error + (w[1].k * w[1].k) as f64 * w[1].error;
                w[1].k2_value > w[0].k2_value + slack
            })
            .map(|w| w[1].k)
            .collect();
        out.checks.push(Check::new("k2_envelope_nonincreasing", viol.is_empty(), format!("increases beyond the quadrature error at k = {viol:?}")));
        out.tables.push(t);
        Ok(out)
    }

    fn energy(&self) -> Res<Outcome> {
        let mut out = Outcome::default();
        let phi = self.cfg.phi_fn()?;
        let mut t = Table::new(
            "energy",
            &format!("Neohookean energy of f~_k: integral of |Df|^p + phi(J) with p = {} and phi = {}", self.cfg.p, phi.name()),
            &[
                ("k", "generation"),
                ("dirichlet", "integral of |Df|^p, Frobenius norm"),
                ("phi_term", "integral of phi(J)"),
                ("total", "dirichlet + phi_term"),
                ("error", "quadrature error estimate"),
                ("converged", "error below rel_tol before the box cap"),
            ],
        )
        .with_plot(0, &[1, 2, 3], true);
        let mut finite = true;
        for m in self.maps()? {
            let r = composite_energy(m, self.cfg.p, phi.as_ref(), self.opts())?;
            finite &= r.total.is_finite();
            if !r.converged {
                out.warnings.push(format!("energy k={}: quadrature stopped above rel_tol", m.k));
            }
            t.push(vec![u(m.k), f(r.dirichlet), f(r.phi), f(r.total), f(r.error), r.converged.to_string()]);
        }
        out.checks.push(Check::new("energy_finite", finite, "every stage has finite energy"));
        out.tables.push(t);
        Ok(out)
    }

    fn orlicz(&self) -> Res<Outcome> {
        let mut out = Outcome::default();
        let n = self.sys.n;
        let cube = 2f64.powi(n as i32);
        let moved = self.moved()?;
        let hists: Vec<_> = moved.iter().map(|m| m.histogram()).collect();
        let build = build_orlicz(&hists)?;
        let chk = check_orlicz(&build.phi);
        out.checks.push(Check::new(
            "orlicz_admissible",
            chk.passed(),
            format!("positive {}, convex {}, blows up at 0 {}, superlinear {}", chk.positive, chk.convex, chk.blows_up, chk.superlinear),
        ));
        out.checks.push(Check::new("orlicz_sup_finite", build.sup.is_finite(), format!("sup_k sum phi(J) vol = {}", f(build.sup))));
        let mut kn = Table::new(
            "orlicz_knots",
            "Orlicz function phi(t) = 1 + lambda log+(1/t) + integral from 1 to t of (log2 s + #{t_i <= s})",
            &[("i", "knot index (0: lambda)"), ("value", "lambda for i = 0, else knot t_i"), ("slope_after", "step in theta at the knot")],
        );
        kn.push(vec![u(0), f(build.phi.lambda), String::new()]);
        for (i, (t, s)) in build.phi.knots.iter().zip(build.phi.slopes()).enumerate() {
            kn.push(vec![u(i + 1), f(*t), f(s)]);
        }
        out.tables.push(kn);
        let mut ints = Table::new(
            "orlicz_integrals",
            "integral of phi(J_f~k) for the constructed phi, with the jacobian range and volume balance",
            &[
                ("k", "generation"),
                ("phi_integral", "sum of phi(J) vol"),
                ("min_jacobian", "smallest J"),
                ("max_jacobian", "largest J"),
                ("volume", "domain volume covered by the histogram"),
                ("image_defect", "integral of J minus 2^n; zero for a homeomorphism of the cube, so a measure of quadrature accuracy"),
                ("error", "quadrature error estimate of the moved part"),
            ],
        )
        .with_plot(0, &[1], false);
        let mut covered = true;
        for (k, (h, v)) in hists.iter().zip(&build.integrals).enumerate() {
            covered &= (h.volume() - cube).abs() <= 1e-9;
            let defect = h.image_volume() - cube;
            if defect.abs() > h.error {
                out.warnings.push(format!(
                    "orlicz k={}: integral of J misses 2^n by {} against an error estimate {}; raise max_boxes",
                    k + 1,
                    f(defect),
                    f(h.error)
                ));
            }
            ints.push(vec![u(k + 1), f(*v), f(h.min_jacobian()), f(h.max_jacobian()), f(h.volume()), f(defect), f(h.error)]);
        }
        out.checks.push(Check::new("histogram_volume", covered, "histogram covers the cube: volume 2^n"));
        out.tables.push(ints);

        let mut md = Table::new(
            "moduli",
            "distortion moduli: smallest and largest |f(A)| over sets with |A| = s",
            &[("k", "generation"), ("s", "|A|"), ("phi_hat", "min |f(A)|"), ("psi_hat", "max |f(A)|")],
        );
        for (k, h) in hists.iter().enumerate() {
            for j in 0..=16 {
                let s = cube * j as f64 / 16.0;
                let (lo, hi) = moduli_at(h, s)?;
                md.push(vec![u(k + 1), f(s), f(lo), f(hi)]);
            }
        }
        out.tables.push(md);

        let mut sw = Table::new(
            "sandwich",
            "random grid sets A: phi_hat(|A|) <= |f(A)| <= psi_hat(|A|) up to the grid error",
            &[
                ("k", "generation"),
                ("set", "set number"),
                ("measure", "|A|"),
                ("image", "|f~_k(A)|"),
                ("grid_error", "jacobian mass of quadrature leaves cut by the boundary of A"),
                ("phi_hat", "lower modulus at |A|"),
                ("psi_hat", "upper modulus at |A|"),
                ("inside", "bounds hold"),
            ],
        );
        let cells = if n == 2 { 16 } else { 8 };
        let lo = vec![-1.0; n];
        let hi = vec![1.0; n];
        let blank = GridSet::empty(n, &lo, &hi, cells)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut violations = 0;
        for (k, (m, h)) in moved.iter().zip(&hists).enumerate() {
            for set in 0..self.cfg.sandwich_sets {
                let p = rng.gen_range(0.05..0.95);
                let mut a = blank.clone();
                for c in 0..a.len() {
                    a.set(c, rng.gen_bool(p));
                }
                let (img, ge) = m.image_measure(&a)?;
                let (plo, phi) = moduli_at(h, a.measure())?;
                let slack = ge + h.error + 1e-9;
                let inside = plo <= img + slack && img <= phi + slack;
                violations += usize::from(!inside);
                sw.push(vec![u(k + 1), u(set), f(a.measure()), f(img), f(ge), f(plo), f(phi), inside.to_string()]);
            }
        }
        out.checks.push(Check::new("moduli_sandwich", violations == 0, format!("{violations} violations")));
        out.tables.push(sw);
        out.files.push(("orlicz.json".into(), serde_json::to_string_pretty(&build.phi).map_err(|e| Failure::Runtime(e.to_string()))? + "\n"));
        Ok(out)
    }

    fn perimeter_demo(&self) -> Res<Outcome> {
        let mut out = Outcome::default();
        let cells = self.cfg.perimeter_cells;
        let mut cal = Table::new(
            "calibration",
            "perimeter estimator on shapes with known perimeter",
            &[
                ("shape", "test set"),
                ("n", "dimension"),
                ("cells", "cells per axis"),
                ("h", "cell size"),
                ("estimate", "estimated perimeter"),
                ("exact", "exact perimeter"),
                ("rel_error", "|estimate - exact|/exact"),
            ],
        );
        let c3 = ((1.2 * cells as f64 / 4.0).ceil() as usize).max(16);
        let shapes: Vec<(&str, GridSet, f64)> = vec![
            ("square", GridSet::from_fn(2, &[-1.0, -1.0], &[1.0, 1.0], cells, |x| x[0].abs() < 0.5 && x[1].abs() < 0.5)?, 4.0),
            ("disk", GridSet::from_fn(2, &[-1.0, -1.0], &[1.0, 1.0], 2 * cells, |x| x[0] * x[0] + x[1] * x[1] < 0.25)?, PI),
            ("ball", GridSet::from_fn(3, &[-0.6; 3], &[0.6; 3], c3, |x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2] < 0.25)?, PI),
        ];
        let mut calibrated = true;
        for (name, set, exact) in &shapes {
            let est = perimeter(set);
            let rel = (est - exact).abs() / exact;
            calibrated &= rel <= 0.03;
            cal.push(vec![name.to_string(), u(set.n), u(set.cells), f(set.spacing(0)), f(est), f(*exact), f(rel)]);
        }
        out.checks.push(Check::new("calibration_3pct", calibrated, "square, disk and ball within 3%"));
        out.tables.push(cal);

        let (family, limit) = oscillating_subgraphs(cells, 3..=8)?;
        let rep = lsc_perimeter_demo(&family, &limit, true, 0.02)?;
        let mut lsc = Table::new(
            "lsc",
            "subgraphs of 1/2 + sin(2 pi k x)/k converge in measure to the half square while their interior perimeter stays near the wave arclength",
            &[("k", "frequency (0: the limit set)"), ("distance", "|A_k sym diff A|"), ("perimeter", "perimeter inside the unit square")],
        )
        .with_plot(0, &[1, 2], false);
        for (i, (d, p)) in rep.distances.iter().zip(&rep.perimeters).enumerate() {
            lsc.push(vec![u(i + 3), f(*d), f(*p)]);
        }
        lsc.push(vec![u(0), f(0.0), f(rep.limit_perimeter)]);
        out.checks.push(Check::new(
            "lsc_gap",
            rep.holds == Some(true) && rep.gap > 2.0,
            format!("limit perimeter {} vs liminf gap {}", f(rep.limit_perimeter), f(rep.gap)),
        ));
        out.tables.push(lsc);

        let mut iso = Table::new(
            "isoperimetric",
            "isoperimetric ratio |A|^((n-1)/n)/P(A) against the disk value 1/(2 sqrt(pi))",
            &[("set", "test set"), ("measure", "|A|"), ("perimeter", "P(A) in the plane"), ("ratio", "isoperimetric ratio")],
        );
        let bound = cavity::disk_isoperimetric_ratio() * 1.03;
        let mut below = true;
        let mut sets: Vec<(String, GridSet)> = vec![("square".into(), shapes[0].1.clone()), ("disk".into(), shapes[1].1.clone())];
        for eps in [0.5, 0.25, 0.125, 0.0625] {
            sets.push((format!("strip_{eps}"), GridSet::from_fn(2, &[-1.0, -1.0], &[1.0, 1.0], cells, move |x| x[0].abs() < 0.5 && x[1].abs() < eps / 2.0)?));
        }
        for (i, a) in family.iter().enumerate() {
            sets.push((format!("subgraph_{}", i + 3), a.clone()));
        }
        for (name, a) in &sets {
            let r = isoperimetric_ratio(a)?;
            below &= r <= bound;
            iso.push(vec![name.clone(), f(a.measure()), f(perimeter(a)), f(r)]);
        }
        out.checks.push(Check::new("isoperimetric_bound", below, format!("every ratio <= {}", f(bound))));
        out.tables.push(iso);
        Ok(out)
    }

    fn cavity_demo(&self) -> Res<Outcome> {
        let mut out = Outcome::default();
        let cells = self.cfg.cavity_cells;
        let h = 2.0 / cells as f64;
        let ms = self.cfg.max_super;
        let mut t = Table::new(
            "cavity",
            "extracted cavities: radial cavitation of B(0,1/2), the identity, and two glued cavities",
            &[
                ("case", "configuration"),
                ("components", "cavity components kept"),
                ("measure", "|A(f)|"),
                ("exact_measure", "analytic cavity measure"),
                ("perimeter", "estimated P(A(f))"),
                ("exact_perimeter", "analytic cavity perimeter"),
                ("boundary_layer", "max distance of misclassified cells from the cavity boundary, in cells"),
            ],
        );
        let f_rad = radial_cavitation(0.5, 1.0, 2)?;
        let domain = GridSet::from_fn(2, &[-1.0, -1.0], &[1.0, 1.0], cells, |x| x[0] * x[0] + x[1] * x[1] < 1.0)?;
        let side = (2.5 / h).round() as usize;
        let image = GridSet::empty(2, &[-1.25, -1.25], &[1.25, 1.25], side)?;
        let ex = extract_cavity(&f_rad, &domain, &image, ms)?;
        let analytic = GridSet::from_fn(2, &[-1.25, -1.25], &[1.25, 1.25], side, |y| y[0] * y[0] + y[1] * y[1] < 0.25)?;
        let layer = ex
            .cavity
            .sym_diff(&analytic)?
            .cells_in()
            .map(|c| {
                let y = image.center(c);
                ((y[0] * y[0] + y[1] * y[1]).sqrt() - 0.5).abs() / h
            })
            .fold(0.0, f64::max);
        let per = perimeter(&ex.cavity);
        t.push(vec!["radial c=1/2".into(), u(ex.components), f(ex.cavity.measure()), f(PI / 4.0), f(per), f(PI), f(layer)]);
        out.checks.push(Check::new("radial_perimeter_5pct", (per - PI).abs() <= 0.05 * PI, format!("{} vs pi", f(per))));
        out.checks.push(Check::new("cavity_image_interface", layer <= 3.0, format!("misclassified cells within {} cells of the boundary", f(layer))));
        out.files.push(("radial_cavity.rle".into(), ex.cavity.to_rle()));

        let id = extract_cavity(&sobolev_lab::homeo::Identity { n: 2 }, &domain, &image, ms)?;
        t.push(vec!["identity".into(), u(id.components), f(id.cavity.measure()), f(0.0), f(perimeter(&id.cavity)), f(0.0), f(0.0)]);
        out.checks.push(Check::new("identity_no_cavity", id.cavity.is_empty(), "identity opens no cavity"));

        let field = CavityField::new(vec![glued_cavitation(&[-0.5, 0.0], 0.2, 0.4)?, glued_cavitation(&[0.5, 0.1], 0.15, 0.4)?])?;
        let whole = GridSet::from_fn(2, &[-1.0, -1.0], &[1.0, 1.0], cells / 2, |_| true)?;
        let grid = whole.cleared();
        let two = extract_cavity(&field, &whole, &grid, ms)?;
        let pc = point_cavities(&field, &whole, &grid, ms)?;
        let exact2 = PI * (0.2f64.powi(2) + 0.15f64.powi(2));
        t.push(vec!["two glued".into(), u(two.components), f(two.cavity.measure()), f(exact2), f(perimeter(&two.cavity)), f(2.0 * PI * 0.35), String::new()]);
        let mut union = grid.cleared();
        for c in &pc.cavities {
            union = union.union(c)?;
        }
        let sd = set_metrics(&union, &two.cavity)?.sym_diff;
        out.checks.push(Check::new("two_components", two.components == 2, format!("{} components", two.components)));
        out.checks.push(Check::new("point_cavities_disjoint", pc.overlap[0][1] == 0.0, format!("overlap {}", f(pc.overlap[0][1]))));
        out.checks.push(Check::new("union_is_cavity_set", sd == 0.0, format!("sym diff {}", f(sd))));
        out.tables.push(t);

        let mut ov = Table::new(
            "cavity_overlap",
            "measure of the intersection of the point cavities of the two-cavity map",
            &[("i", "cavity"), ("j", "cavity"), ("overlap", "|f_T(x_i) cap f_T(x_j)|")],
        );
        for (i, row) in pc.overlap.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                ov.push(vec![u(i), u(j), f(*v)]);
            }
        }
        out.tables.push(ov);

        let phi = self.cfg.phi_fn()?;
        let fam = |c: f64| -> Res<CavityField> { Ok(CavityField::new(vec![glued_cavitation(&[0.0, 0.0], c, 0.95)?])?) };
        let cs: Vec<f64> = (3..=8).map(|k| 0.5 + 1.0 / k as f64).collect();
        let family = cs.iter().map(|&c| fam(c)).collect::<Res<Vec<_>>>()?;
        let eg = GridSet::empty(2, &[-1.0, -1.0], &[1.0, 1.0], cells / 2)?;
        let rep = cavity_energy_report(&family, &fam(0.5)?, self.cfg.p, phi.as_ref(), self.cfg.a, &eg, ms, self.opts(), 1e-3)?;
        let mut ec = Table::new(
            "cavity_energy",
            &format!(
                "cavity energy E_c = integral of |Df|^p + phi(J) plus a P(A(f)), p = {}, a = {}, shrinking cavities c_k = 1/2 + 1/k",
                self.cfg.p, self.cfg.a
            ),
            &[
                ("c", "cavity radius (the last row is the limit c = 1/2)"),
                ("dirichlet", "integral of |Df|^p"),
                ("phi_term", "integral of phi(J)"),
                ("perimeter_term", "a P(A(f))"),
                ("total", "E_c"),
                ("error", "quadrature error estimate"),
                ("cavity_measure", "|A(f)|"),
            ],
        )
        .with_plot(0, &[4], false);
        for (c, e) in cs.iter().chain([&0.5]).zip(rep.family.iter().chain([&rep.limit])) {
            let r = &e.energy;
            ec.push(vec![f(*c), f(r.dirichlet), f(r.phi), f(r.perimeter), f(r.total), f(r.error), f(e.cavity_measure)]);
        }
        let decreasing = rep.family.windows(2).all(|w| w[1].energy.total < w[0].energy.total);
        out.checks.push(Check::new("cavity_energy_lsc", rep.lsc_holds, format!("E_c(limit) = {}", f(rep.limit.energy.total))));
        out.checks.push(Check::new("cavity_energy_decreasing", decreasing, "E_c decreases along c_k = 1/2 + 1/k"));
        out.tables.push(ec);
        Ok(out)
    }
}
