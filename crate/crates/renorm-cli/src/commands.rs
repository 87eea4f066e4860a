//! Subcommand implementations. Every command produces a flat key-value
//! report plus optional CSV artifacts; numbers print with 17 significant
//! digits so identical runs are byte-identical.

use renorm::circle::{CylPoint, FiberKind, SampleGrid};
use renorm::construct::{
    compile, fiber_plugin, rotation_plugin, star_product, twist_plugin, universal_assemble,
    CompileCase, CompileOptions, UniversalBand,
};
use renorm::error::{Error, Result};
use renorm::expr::parse_expr;
use renorm::field::{check_ad_eigen, commutator_flow, lie_bracket, trotter_compose, CylField, IntegratorOpts};
use renorm::gridmap::format_map_table;
use renorm::lang::parse_map_at;
use renorm::lielab::{decompose_compactify, LineField};
use renorm::mapexpr::{c0_grid_distance, cr_distance, MapExpr, MapNode};
use renorm::measure::{
    invariance_residual, lyapunov_relation, transfer_to_output, transfer_to_plugin,
    DensitySampler, LyapunovOptions,
};
use renorm::plugin::Plugin;
use renorm::profile::make_bump;

use crate::recipe::{parse_grid_flag, Recipe};

pub struct Flags {
    pub grid: Option<String>,
    pub order: Option<usize>,
    pub seed: Option<usize>,
    pub out: Option<std::path::PathBuf>,
}

pub struct Outcome {
    pub report: String,
    pub files: Vec<(String, String)>,
    pub pass: bool,
    pub fail_key: Option<String>,
}

fn fmt(x: f64) -> String {
    format!("{:.16e}", x)
}

struct ReportBuilder {
    lines: Vec<String>,
    pass: bool,
    fail_key: Option<String>,
}

impl ReportBuilder {
    fn new(command: &str) -> Self {
        ReportBuilder {
            lines: vec![format!("command={command}")],
            pass: true,
            fail_key: None,
        }
    }

    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key}={value}"));
    }

    fn kv_f(&mut self, key: &str, value: f64) {
        self.lines.push(format!("{key}={}", fmt(value)));
    }

    /// Record a thresholded check: the value must not exceed the bound
    /// (NaN counts as failing).
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn check_le(&mut self, key: &str, value: f64, bound: f64) {
        self.kv_f(key, value);
        if !(value <= bound) {
            self.fail(key);
        }
    }

    fn check(&mut self, key: &str, ok: bool) {
        self.kv(key, ok);
        if !ok {
            self.fail(key);
        }
    }

    fn fail(&mut self, key: &str) {
        self.pass = false;
        if self.fail_key.is_none() {
            self.fail_key = Some(key.to_string());
        }
    }

    fn finish(mut self, files: Vec<(String, String)>) -> Outcome {
        self.lines.push(format!("pass={}", self.pass));
        let mut report = self.lines.join("\n");
        report.push('\n');
        Outcome { report, files, pass: self.pass, fail_key: self.fail_key }
    }
}

fn target_map(recipe: &Recipe) -> Result<MapExpr<f64>> {
    let entry = recipe.require("target", "map")?;
    parse_map_at(&entry.value, recipe.dir.as_deref(), entry.line, entry.value_col)
}

fn verify_grid(recipe: &Recipe, flags: &Flags) -> Result<SampleGrid<f64>> {
    if let Some(raw) = &flags.grid {
        let (a, b) = parse_grid_flag(raw)?;
        return Ok(SampleGrid::new(a, b));
    }
    if let Some(e) = recipe.get("verify", "grid") {
        let (a, b) = recipe.grid_of(e)?;
        return Ok(SampleGrid::new(a, b));
    }
    Ok(SampleGrid::new(64, 64))
}

fn verify_order(recipe: &Recipe, flags: &Flags) -> Result<usize> {
    if let Some(r) = flags.order {
        return Ok(r);
    }
    if let Some(e) = recipe.get("verify", "order") {
        return recipe.usize_of(e);
    }
    Ok(1)
}

struct PluginSpec {
    k: u32,
    delta: Option<f64>,
    tol: f64,
    n_factors: Option<usize>,
    case: CompileCase,
}

fn plugin_spec(recipe: &Recipe) -> Result<PluginSpec> {
    let k = match recipe.get("plugin", "k") {
        Some(e) => recipe.usize_of(e)? as u32,
        None => 7,
    };
    let delta = match recipe.get("plugin", "delta") {
        Some(e) => Some(recipe.f64_of(e)?),
        None => None,
    };
    let tol = match recipe.get("plugin", "tol") {
        Some(e) => recipe.f64_of(e)?,
        None => 5e-3,
    };
    let n_factors = match recipe.get("plugin", "n_factors") {
        Some(e) => Some(recipe.usize_of(e)?),
        None => None,
    };
    let case = match recipe.get("plugin", "case") {
        Some(e) => match e.value.as_str() {
            "auto" => CompileCase::Auto,
            "near-0" => CompileCase::Near0,
            "near-1/2" => CompileCase::Near12,
            other => {
                return Err(Error::Parse {
                    line: e.line,
                    column: 1,
                    message: format!("case must be auto | near-0 | near-1/2, got `{other}`"),
                })
            }
        },
        None => CompileCase::Auto,
    };
    Ok(PluginSpec { k, delta, tol, n_factors, case })
}

struct Built {
    plugin: Plugin<f64>,
    construction: &'static str,
    final_k: u32,
    n_factors: usize,
    output_error: Option<f64>,
    meets_tol: Option<bool>,
}

/// Build a plugin for the target, picking the direct construction when the
/// target is one of the named catalog maps.
fn build_plugin(
    target: &MapExpr<f64>,
    spec: &PluginSpec,
    verify: Option<&SampleGrid<f64>>,
) -> Result<Built> {
    match (target.node(), spec.case) {
        (MapNode::Rotation { sigma }, CompileCase::Auto)
            if (*sigma - 2f64.powi(-(spec.k as i32))).abs() < 1e-15 =>
        {
            Ok(Built {
                plugin: rotation_plugin(spec.k),
                construction: "rotation",
                final_k: spec.k,
                n_factors: 1,
                output_error: None,
                meets_tol: None,
            })
        }
        (MapNode::Twist { nu }, CompileCase::Auto) => {
            let plugin = twist_plugin(nu.clone(), spec.k)?;
            let output_error = match verify {
                Some(g) => Some(c0_grid_distance(&plugin.output_map(), target, g)?),
                None => None,
            };
            Ok(Built {
                plugin,
                construction: "twist",
                final_k: spec.k,
                n_factors: 1,
                meets_tol: output_error.map(|e| e <= spec.tol),
                output_error,
            })
        }
        (MapNode::FiberMap { displacement }, CompileCase::Auto) => {
            let plugin = fiber_plugin(displacement.clone(), spec.k)?;
            let output_error = match verify {
                Some(g) => Some(c0_grid_distance(&plugin.output_map(), target, g)?),
                None => None,
            };
            Ok(Built {
                plugin,
                construction: "dil",
                final_k: spec.k,
                n_factors: 1,
                meets_tol: output_error.map(|e| e <= spec.tol),
                output_error,
            })
        }
        _ => {
            let opts = CompileOptions {
                k: spec.k,
                delta: spec.delta,
                n_factors: spec.n_factors,
                tol: spec.tol,
                case: spec.case,
                verify_grid: verify.copied(),
            };
            let compiled = compile(target, &opts)?;
            Ok(Built {
                construction: compiled.report.construction,
                final_k: compiled.report.final_k,
                n_factors: compiled.report.n_factors,
                output_error: compiled.report.output_c0_error,
                meets_tol: compiled.report.meets_tol,
                plugin: compiled.plugin,
            })
        }
    }
}

pub fn build(recipe: &Recipe, flags: &Flags) -> Result<Outcome> {
    let target = target_map(recipe)?;
    let spec = plugin_spec(recipe)?;
    let grid = verify_grid(recipe, flags)?;
    let order = verify_order(recipe, flags)?;
    let built = build_plugin(&target, &spec, Some(&grid))?;

    let mut rb = ReportBuilder::new("build");
    rb.kv("construction", built.construction);
    rb.kv("k", spec.k);
    rb.kv("final_k", built.final_k);
    rb.kv_f("sigma", 2f64.powi(-(built.final_k as i32)));
    rb.kv("n_factors", built.n_factors);
    if let Some(err) = built.output_error {
        rb.check_le("output_c0_error", err, spec.tol);
    }
    let dist0 = cr_distance(&built.plugin.map, &MapExpr::identity(), 0, &grid)?;
    rb.kv_f("dist_c0", dist0);
    if order >= 1 {
        let dist1 = cr_distance(&built.plugin.map, &MapExpr::identity(), 1, &grid)?;
        rb.kv_f("dist_c1", dist1);
    }
    if order >= 2 {
        let dist2 = cr_distance(&built.plugin.map, &MapExpr::identity(), 2, &grid)?;
        rb.kv_f("dist_c2", dist2);
    }
    if let Some(ok) = built.meets_tol {
        rb.check("meets_tol", ok);
    }

    // a replayable recipe describing the built plugin
    let mut plugin_recipe = String::new();
    if let Some(src) = renorm::lang::print_map(&target) {
        plugin_recipe.push_str("[target]\n");
        plugin_recipe.push_str(&format!("map = {src}\n\n"));
    }
    plugin_recipe.push_str("[plugin]\n");
    plugin_recipe.push_str(&format!("k = {}\n", spec.k));
    if let Some(d) = spec.delta {
        plugin_recipe.push_str(&format!("delta = {}\n", fmt(d)));
    }
    plugin_recipe.push_str(&format!("tol = {}\n", fmt(spec.tol)));
    plugin_recipe.push_str(&format!(
        "# construction {} with step 2^-{}\n",
        built.construction, built.final_k
    ));
    Ok(rb.finish(vec![("plugin.recipe".into(), plugin_recipe)]))
}

pub fn validate(recipe: &Recipe, flags: &Flags) -> Result<Outcome> {
    let target = target_map(recipe)?;
    let spec = plugin_spec(recipe)?;
    let grid = verify_grid(recipe, flags)?;
    let built = build_plugin(&target, &spec, None)?;
    let report = built.plugin.validate(&grid)?;

    let mut rb = ReportBuilder::new("validate");
    rb.kv("construction", built.construction);
    rb.kv_f("sigma", 2f64.powi(-(built.final_k as i32)));
    rb.kv_f("axiom_i_residual", report.axiom_i_residual);
    rb.kv("max_return_time", report.max_return_time);
    rb.kv_f("coverage_fraction", report.coverage_fraction);
    rb.kv("samples", format!("{}x{}", report.samples.0, report.samples.1));
    rb.check("axioms_pass", report.pass);
    Ok(rb.finish(vec![]))
}

fn sample_to_csv(map: &MapExpr<f64>, grid: &SampleGrid<f64>) -> Result<String> {
    let mut rows = Vec::with_capacity(grid.len());
    for p in grid.points() {
        let q = map.evaluate(p)?;
        rows.push((p.theta.reduced(), p.y, q.theta.reduced(), q.y));
    }
    Ok(format_map_table(&rows))
}

pub fn output_grid(recipe: &Recipe, flags: &Flags) -> Result<Outcome> {
    let target = target_map(recipe)?;
    let spec = plugin_spec(recipe)?;
    let grid = verify_grid(recipe, flags)?;
    let built = build_plugin(&target, &spec, None)?;
    let csv = sample_to_csv(&built.plugin.output_map(), &grid)?;

    let mut rb = ReportBuilder::new("output-grid");
    rb.kv("construction", built.construction);
    rb.kv_f("sigma", 2f64.powi(-(built.final_k as i32)));
    rb.kv("rows", grid.len());
    rb.kv("file", "output_grid.csv");
    Ok(rb.finish(vec![("output_grid.csv".into(), csv)]))
}

pub fn sample_map(recipe: &Recipe, flags: &Flags) -> Result<Outcome> {
    let target = target_map(recipe)?;
    let grid = verify_grid(recipe, flags)?;
    let csv = sample_to_csv(&target, &grid)?;
    let mut rb = ReportBuilder::new("sample-map");
    rb.kv("rows", grid.len());
    rb.kv("file", "sample_map.csv");
    Ok(rb.finish(vec![("sample_map.csv".into(), csv)]))
}

pub fn star(recipe: &Recipe, flags: &Flags) -> Result<Outcome> {
    let left = recipe.require("star", "left")?;
    let right = recipe.require("star", "right")?;
    let k = match recipe.get("star", "k") {
        Some(e) => recipe.usize_of(e)? as u32,
        None => 6,
    };
    let grid = verify_grid(recipe, flags)?;
    let left_map: MapExpr<f64> =
        parse_map_at(&left.value, recipe.dir.as_deref(), left.line, left.value_col)?;
    let right_map: MapExpr<f64> =
        parse_map_at(&right.value, recipe.dir.as_deref(), right.line, right.value_col)?;
    let spec = PluginSpec { k, delta: None, tol: 5e-3, n_factors: None, case: CompileCase::Auto };
    let g1 = build_plugin(&left_map, &spec, None)?;
    let g0 = build_plugin(&right_map, &spec, None)?;
    let starred = star_product(&g1.plugin, &g0.plugin)?;
    let report = starred.validate(&grid)?;
    let law = c0_grid_distance(
        &starred.output_map(),
        &MapExpr::compose(g1.plugin.output_map(), g0.plugin.output_map()),
        &grid,
    )?;

    let mut rb = ReportBuilder::new("star");
    rb.kv("construction", "star");
    rb.kv("left_construction", g1.construction);
    rb.kv("right_construction", g0.construction);
    rb.kv("k", k);
    rb.kv("final_k", starred.k);
    rb.kv_f("sigma", 2f64.powi(-(starred.k as i32)));
    rb.check("axioms_pass", report.pass);
    rb.kv("max_return_time", report.max_return_time);
    rb.check_le("output_law_residual", law, 2e-5);
    Ok(rb.finish(vec![]))
}

pub fn universal(recipe: &Recipe, flags: &Flags) -> Result<Outcome> {
    let entries = recipe.get_all("universal", "band");
    if entries.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "missing band entries in section [universal] (missing universal)".into(),
        });
    }
    let grid = verify_grid(recipe, flags)?;
    let mut bands = Vec::new();
    for e in &entries {
        // band = ell, ell_prime, k, map-definition
        let mut parts = e.value.splitn(4, ',');
        let mut next = |what: &str| -> Result<&str> {
            parts.next().map(str::trim).ok_or(Error::Parse {
                line: e.line,
                column: 1,
                message: format!("band needs `ell, ell_prime, k, map`; missing {what}"),
            })
        };
        let ell: f64 = next("ell")?.parse().map_err(|_| Error::Parse {
            line: e.line,
            column: 1,
            message: "malformed ell".into(),
        })?;
        let ell_prime: f64 = next("ell_prime")?.parse().map_err(|_| Error::Parse {
            line: e.line,
            column: 1,
            message: "malformed ell_prime".into(),
        })?;
        let k: u32 = next("k")?.parse().map_err(|_| Error::Parse {
            line: e.line,
            column: 1,
            message: "malformed k".into(),
        })?;
        let map_src = next("map")?;
        let target: MapExpr<f64> = parse_map_at(map_src, recipe.dir.as_deref(), e.line, 1)?;
        bands.push(UniversalBand { target, ell, ell_prime, k });
    }
    let opts = CompileOptions::<f64> { verify_grid: Some(grid), ..Default::default() };
    let assembly = universal_assemble(&bands, &opts)?;

    let mut rb = ReportBuilder::new("universal");
    rb.kv("construction", "compile");
    rb.kv("bands", assembly.bands.len());
    for (i, band) in assembly.bands.iter().enumerate() {
        rb.kv_f(&format!("band{i}.s"), band.s);
        rb.kv_f(&format!("band{i}.ell"), band.ell);
        rb.kv_f(&format!("band{i}.sigma"), band.sigma);
        rb.kv(&format!("band{i}.final_k"), band.final_k);
        rb.kv_f(&format!("band{i}.orbit_volume"), band.orbit_volume);
        if let Some(err) = band.output_error {
            rb.check_le(&format!("band{i}.output_error"), err, 5e-3);
        }
    }
    // off-band support check
    let mut worst = 0.0f64;
    for i in 0..64 {
        let th = i as f64 / 64.0;
        for j in 0..=32 {
            let y = j as f64 / 32.0;
            let inside = assembly.bands.iter().any(|b| y >= b.s && y <= b.s + b.ell);
            if !inside {
                let (dt, dy) = assembly.map.displacement(CylPoint::new(th, y))?;
                worst = worst.max((dt * dt + dy * dy).sqrt());
            }
        }
    }
    rb.check_le("off_band_displacement", worst, 1e-12);
    Ok(rb.finish(vec![]))
}

pub fn measure(recipe: &Recipe, flags: &Flags) -> Result<Outcome> {
    let target = target_map(recipe)?;
    let spec = plugin_spec(recipe)?;
    let grid = verify_grid(recipe, flags)?;
    let built = build_plugin(&target, &spec, None)?;

    let density = match recipe.get("measure", "density") {
        Some(e) if e.value != "lebesgue" => {
            let path = match &recipe.dir {
                Some(d) => d.join(&e.value),
                None => std::path::PathBuf::from(&e.value),
            };
            DensitySampler::from_table(&std::fs::read_to_string(path)?)?
        }
        _ => DensitySampler::lebesgue(),
    };
    let n_iter = match recipe.get("measure", "n") {
        Some(e) => recipe.usize_of(e)?,
        None => 10_000,
    };
    let seeds = match flags.seed {
        Some(s) => s,
        None => match recipe.get("measure", "seeds") {
            Some(e) => recipe.usize_of(e)?,
            None => 32,
        },
    };
    let orbit_step = match recipe.get("measure", "orbit_step") {
        Some(e) => recipe.f64_of(e)?,
        None => 1.0 / 8.0,
    };

    // transfer grid: theta-even, y-odd for the Simpson weights
    let tgrid = SampleGrid::new(grid.n_theta.max(4), grid.n_y | 1);
    let rho_g = transfer_to_plugin(&density, &built.plugin, &tgrid)?;
    let inv = invariance_residual(&rho_g, &built.plugin.map, &grid)?;
    let back = transfer_to_output(&rho_g, &built.plugin, &tgrid)?;
    let mut roundtrip = 0.0f64;
    for p in SampleGrid::new(33, 33).points() {
        let a = back.value(p.theta.reduced(), p.y);
        let b = density.value(p.theta.reduced(), p.y);
        roundtrip = roundtrip.max((a - b).abs());
    }
    let ly = lyapunov_relation(
        &built.plugin,
        &density,
        &SampleGrid::new(32, 33),
        &LyapunovOptions { n_iter, seeds, orbit_step, ..Default::default() },
    )?;

    let mut rb = ReportBuilder::new("measure");
    rb.kv("construction", built.construction);
    rb.kv_f("sigma", 2f64.powi(-(built.final_k as i32)));
    rb.kv("density", "lebesgue");
    rb.check_le("invariance_residual", inv, 1e-3);
    rb.check_le("roundtrip_residual", roundtrip, 1e-5);
    rb.kv_f("lambda_g_top", ly.lambda_g[0]);
    rb.kv_f("lambda_g_bottom", ly.lambda_g[1]);
    rb.kv_f("lambda_G_top", ly.lambda_capital_g[0]);
    rb.kv_f("lambda_G_bottom", ly.lambda_capital_g[1]);
    rb.kv_f("tau_bar", ly.tau_bar);
    rb.kv_f("lyapunov_defect", ly.defect);
    rb.kv_f("lyapunov_spread", ly.spread_g);
    rb.check_le("lyapunov_relative_defect", ly.relative_defect, 0.05);
    rb.kv("iterations", n_iter);
    rb.kv("seeds", seeds);
    Ok(rb.finish(vec![]))
}

pub fn lielab(recipe: &Recipe, flags: &Flags) -> Result<Outcome> {
    let a = match recipe.get("lielab", "a") {
        Some(e) => recipe.f64_of(e)?,
        None => 1.0,
    };
    let big_a = match recipe.get("lielab", "big_a") {
        Some(e) => recipe.f64_of(e)?,
        None => 0.6,
    };
    let samples = match recipe.get("lielab", "samples") {
        Some(e) => recipe.usize_of(e)?,
        None => 2048,
    };
    let t_field = match recipe.get("lielab", "t") {
        Some(e) => {
            let expr: renorm::expr::ScalarExpr<f64> = parse_expr(&e.value)?;
            LineField::from_fn(move |y| expr.eval(y, y, y), (-big_a, big_a))
        }
        None => LineField::from_profile(make_bump(0.0, big_a * 0.8, 1.0)?),
    };

    let triple = decompose_compactify(&t_field, a, big_a)?;
    let r_eigen = triple.eigen_residual(samples);
    let r_dec = triple.decomposition_residual(&t_field, samples);
    let decay = triple.boundary_decay(1e-3);

    // flow identity sweep on the compactified pair
    let (cx, cy) = triple.cylinder_pair();
    let g_line = SampleGrid::new(6, 13)
        .with_fiber(FiberKind::Line)
        .with_y_range(-0.9 * a, 0.9 * a);
    let opts = IntegratorOpts::with_step(1e-3);
    let mut worst_ad = 0.0f64;
    for s in [1.0, -1.0, 2.0, -2.0] {
        for t in [0.1, 0.5] {
            worst_ad = worst_ad.max(check_ad_eigen(&cx, &cy, s, t, &g_line, opts)?);
        }
    }

    // flow-composition sweeps with the standard non-commuting pair
    let x = CylField::from_exprs(
        parse_expr("bump(y, 0.5, 0.4, 0.3)").unwrap(),
        parse_expr("0").unwrap(),
    );
    let y = CylField::from_exprs(
        parse_expr("0").unwrap(),
        parse_expr("bump(y, 0.5, 0.35, 0.3)").unwrap(),
    );
    let trotter_n = match recipe.get("lielab", "trotter_n") {
        Some(e) => recipe.usize_of(e)?,
        None => 8,
    };
    let cgrid = verify_grid(recipe, flags).unwrap_or(SampleGrid::new(24, 24));
    let sum = x.add(&y);
    let reference = MapExpr::flow_map(sum, 1.0, IntegratorOpts::with_step(1.0 / 512.0));
    let mut trotter_errs = Vec::new();
    for n in [trotter_n, trotter_n * 2] {
        let m = trotter_compose(&x, &y, n, IntegratorOpts::with_step(1.0 / (8.0 * n as f64)));
        trotter_errs.push(c0_grid_distance(&m, &reference, &cgrid)?);
    }
    let trotter_ratio = trotter_errs[1] / trotter_errs[0];

    let tau0 = match recipe.get("lielab", "commutator_tau") {
        Some(e) => recipe.f64_of(e)?,
        None => 0.25,
    };
    let bracket = lie_bracket(&x, &y);
    let mut comm_errs = Vec::new();
    for tau in [tau0, tau0 / 2.0] {
        let m = commutator_flow(&x, &y, tau, IntegratorOpts::with_step(tau / 256.0));
        let reference = MapExpr::flow_map(
            bracket.clone(),
            tau * tau,
            IntegratorOpts::with_step(tau * tau / 16.0),
        );
        comm_errs.push(c0_grid_distance(&m, &reference, &cgrid)?);
    }
    let comm_ratio = comm_errs[0] / comm_errs[1];

    let mut rb = ReportBuilder::new("lielab");
    rb.kv_f("a", a);
    rb.kv_f("big_a", big_a);
    rb.kv("samples", samples);
    rb.check_le("eigen_residual", r_eigen, 1e-6);
    rb.check_le("decomposition_residual", r_dec, 1e-6);
    rb.check_le("boundary_decay", decay, 1e-8);
    rb.check_le("ad_eigen_residual", worst_ad, 1e-4);
    rb.kv_f("trotter_err_n", trotter_errs[0]);
    rb.kv_f("trotter_err_2n", trotter_errs[1]);
    rb.kv_f("trotter_ratio", trotter_ratio);
    rb.check("trotter_ratio_in_range", (0.3..=0.7).contains(&trotter_ratio));
    rb.kv_f("commutator_err_tau", comm_errs[0]);
    rb.kv_f("commutator_err_half", comm_errs[1]);
    rb.kv_f("commutator_ratio", comm_ratio);
    rb.check("commutator_ratio_in_range", (4.0..=16.0).contains(&comm_ratio));
    Ok(rb.finish(vec![]))
}
