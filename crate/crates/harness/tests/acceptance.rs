//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! The reduced training profile (lift 256, 500 epochs) is trained once and shared by
//! criteria 1, 2, 3 and 10. The full profile is evaluated only when `ISAC_FULL_CHECKPOINT`
//! names a checkpoint trained with the default config, or trained here when
//! `ISAC_FULL_PROFILE=1`. `ISAC_ACCEPTANCE_ONLY=4,5` restricts the run to listed criteria.

use std::path::{Path, PathBuf};
use std::time::Instant;

use isac_core::baselines::{angle_grid, bartlett_doa, ls_channel_estimate, optimize_precoder, OptimizerConfig};
use isac_core::grad::{finite_diff_check, FdConfig};
use isac_core::metrics::{illumination, monte_carlo_illumination, monte_carlo_sinr, sinr, Precoder};
use isac_core::net::{precode, InputScaling, NetParams};
use isac_core::numerics::{db_to_lin, sample_cgauss, CMat, RMat, RngStream, C64};
use isac_core::scene::{sample_scene, Scene, SceneConfig, Target};
use isac_core::sounding::{gen_pilots, gen_probing, matched_filter, rx_echoes, Sounder, SoundingConfig};
use isac_core::training::{draw_sample, trace_loss, Hyperparams};
use isac_harness::commands::{cmd_eval, load_net, train_to, CHECKPOINT_FILE, LOSS_FILE};
use isac_harness::config::{ExperimentConfig, Method, Sweep};
use isac_harness::eval::evaluate;
use isac_harness::scaling::{fit, measure};

/// Paper value of the worst-case illumination at the default point, dB.
const Q_PAPER_DB: f64 = -56.7;
const GAMMA_MIN_DB: f64 = 5.0;
const Q_BAND_FULL_DB: f64 = 3.0;
const Q_BAND_REDUCED_DB: f64 = 5.0;
const REDUCED_BUDGET_S: f64 = 1800.0;
const EVAL_REALIZATIONS: usize = 100;
const FD_INSTANCES: u64 = 20;
const MC_INSTANCES: u64 = 50;
const MC_DRAWS: usize = 100_000;
const MC_Z_MAX: f64 = 3.0;
const GRAM_TOL: f64 = 1e-10;
const POWER_REL_TOL: f64 = 1e-9;
const LS_TOL: f64 = 1e-10;
const MF_TOL: f64 = 1e-9;
const ORACLE_REL_TOL: f64 = 0.02;
const K0_REL_TOL: f64 = 0.01;
const DOA_TRIALS: u64 = 200;
const DOA_MIN_SEP_DEG: f64 = 10.0;
const DOA_STEP_DEG: f64 = 0.25;
const DOA_SUCCESS: f64 = 0.95;
const HIGH_SNR_NOISE_SCALE: f64 = 1e-3;
const SCALING_KS: [usize; 4] = [2, 4, 8, 16];
const SCALING_EXPONENT_MAX: f64 = 1.3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn scratch() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("isac-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn base_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reduced();
    cfg.output_dir = out.to_path_buf();
    cfg.eval.realizations = EVAL_REALIZATIONS;
    cfg.eval.methods = vec![Method::Proposed];
    cfg
}

fn proposed_point(cfg: &ExperimentConfig, net: &NetParams) -> Result<(f64, f64), String> {
    let rows = evaluate(cfg, Some(net), &[Method::Proposed]).map_err(|e| e.to_string())?;
    Ok((rows[0].gamma_min_db, rows[0].q_db))
}

struct Reduced {
    cfg: ExperimentConfig,
    net: NetParams,
    seconds: f64,
}

fn train_reduced(dir: &Path) -> Result<Reduced, String> {
    let cfg = base_config(&dir.join("reduced"));
    let started = Instant::now();
    let trained = train_to(&cfg, None, |_| {}).map_err(|e| e.to_string())?;
    Ok(Reduced { cfg, net: trained.net, seconds: started.elapsed().as_secs_f64() })
}

fn full_profile(dir: &Path) -> Option<Result<(f64, f64), String>> {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.join("full");
    cfg.eval.realizations = EVAL_REALIZATIONS;
    let net = if let Ok(path) = std::env::var("ISAC_FULL_CHECKPOINT") {
        load_net(Path::new(&path), &cfg).map_err(|e| e.to_string())
    } else if std::env::var("ISAC_FULL_PROFILE").is_ok_and(|v| v == "1") {
        train_to(&cfg, None, |_| {}).map(|t| t.net).map_err(|e| e.to_string())
    } else {
        return None;
    };
    Some(net.and_then(|net| proposed_point(&cfg, &net)))
}

fn criterion_1(dir: &Path, reduced: &Result<Reduced, String>) -> Result<Verdict, String> {
    let r = reduced.as_ref().map_err(Clone::clone)?;
    let (g, q) = proposed_point(&r.cfg, &r.net)?;
    let reduced_ok = g >= GAMMA_MIN_DB && (q - Q_PAPER_DB).abs() <= Q_BAND_REDUCED_DB && r.seconds <= REDUCED_BUDGET_S;
    let mut detail = format!("reduced: gamma_min {g:.2} dB, Q {q:.2} dB, train {:.0} s", r.seconds);
    let full_ok = match full_profile(dir) {
        None => {
            detail.push_str("; full profile not evaluated (set ISAC_FULL_CHECKPOINT or ISAC_FULL_PROFILE=1)");
            true
        }
        Some(Err(e)) => {
            detail.push_str(&format!("; full profile error: {e}"));
            false
        }
        Some(Ok((g, q))) => {
            detail.push_str(&format!("; full: gamma_min {g:.2} dB, Q {q:.2} dB"));
            g >= GAMMA_MIN_DB && (q - Q_PAPER_DB).abs() <= Q_BAND_FULL_DB
        }
    };
    Ok(verdict(reduced_ok && full_ok, detail))
}

fn criterion_2(reduced: &Result<Reduced, String>) -> Result<Verdict, String> {
    let r = reduced.as_ref().map_err(Clone::clone)?;
    let mut cfg = r.cfg.clone();
    cfg.sweep = Some(Sweep::default_pd());
    let methods = [Method::Proposed, Method::PerfectCsi, Method::EstimatedCsi];
    let rows = evaluate(&cfg, Some(&r.net), &methods).map_err(|e| e.to_string())?;
    let q = |method: &str| rows.iter().filter(|row| row.method == method).map(|row| row.q_db).collect::<Vec<_>>();
    let (prop, perf, est) = (q("proposed"), q("perfect-csi"), q("estimated-csi"));
    let beats_est = prop.iter().zip(&est).all(|(p, e)| p > e);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let perf_ge = mean(&perf) >= mean(&prop);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/");
    Ok(verdict(
        beats_est && perf_ge,
        format!("Q dB over P_d -10..10: proposed {}, estimated-csi {}, perfect-csi {}", fmt(&prop), fmt(&est), fmt(&perf)),
    ))
}

fn criterion_3(reduced: &Result<Reduced, String>) -> Result<Verdict, String> {
    let r = reduced.as_ref().map_err(Clone::clone)?;
    let mut cfg = r.cfg.clone();
    let ks = vec![2, 3, 4, 5, 6];
    cfg.sweep = Some(Sweep::KTest(ks.clone()));
    let by_k: Vec<f64> = evaluate(&cfg, Some(&r.net), &[Method::Proposed])
        .map_err(|e| e.to_string())?
        .iter()
        .map(|row| row.gamma_min_db)
        .collect();
    let monotone = by_k.windows(2).all(|w| w[1] <= w[0]);
    let above = ks.iter().zip(&by_k).filter(|(k, _)| **k <= 4).all(|(_, g)| *g > r.cfg.hyperparams.gamma_db);
    cfg.sweep = Some(Sweep::AreaM(vec![[15.0, 18.0, 8.0, 18.0], [10.0, 20.0, 5.0, 25.0], [5.0, 25.0, 5.0, 25.0]]));
    let by_area: Vec<f64> = evaluate(&cfg, Some(&r.net), &[Method::Proposed])
        .map_err(|e| e.to_string())?
        .iter()
        .map(|row| row.gamma_min_db)
        .collect();
    let areas_ok = by_area.iter().all(|&g| g >= GAMMA_MIN_DB);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    Ok(verdict(
        monotone && above && areas_ok,
        format!("gamma_min dB for K_test 2..6: {}; for areas 30/200/400 m^2: {}", fmt(&by_k), fmt(&by_area)),
    ))
}

fn criterion_4() -> Result<Verdict, String> {
    let started = Instant::now();
    let hp = Hyperparams::default();
    let snd = SoundingConfig::default();
    let cfg = SceneConfig { m: 4, k: 2, t: 2, ..SceneConfig::default() };
    let sounder = Sounder::new(&snd, 4, 2, cfg.nu2_w()).map_err(|e| e.to_string())?;
    let (mut worst, mut checked, mut excluded, mut failed) = (0.0f64, 0, 0, 0);
    for seed in 0..FD_INSTANCES {
        let rng = RngStream::new(0xfd00 + seed, 0);
        let mut net = NetParams::init(4, 2, 32, &mut rng.fork(1))
            .with_scaling(InputScaling::noise_whitening(snd.lp, snd.lr, 4, cfg.nu2_w()));
        let mut mu_rng = rng.fork(2);
        net.mu.mapv_inplace(|_| mu_rng.uniform(-2.0, 2.0));
        let (scene, data) = draw_sample(&cfg, &sounder, &rng.fork(3)).map_err(|e| e.to_string())?;
        let params: Vec<RMat> = net.tensor_refs().into_iter().cloned().collect();
        let report = finite_diff_check(
            |tape| Ok(trace_loss(tape, &net, &data, &scene, &hp, cfg.sigma2_w())?.ell),
            &params,
            FdConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_err);
        checked += report.checked;
        excluded += report.excluded.len();
        failed += report.failures.len();
    }
    Ok(verdict(
        failed == 0,
        format!(
            "{FD_INSTANCES} instances, {checked} coordinates ({excluded} kink-adjacent excluded), max rel err {worst:.2e}, {} s",
            started.elapsed().as_secs()
        ),
    ))
}

fn criterion_5() -> Result<Verdict, String> {
    let (mut worst_sinr, mut worst_q, mut misses) = (0.0f64, 0.0f64, 0);
    for i in 0..MC_INSTANCES {
        let rng = RngStream::new(0x5eed_0005, i);
        let m = 2 + (i as usize % 7);
        let k = 1 + (i as usize % 3);
        let cfg = SceneConfig { m, k, t: 1, ..SceneConfig::default() };
        let scene = sample_scene(&cfg, &mut rng.fork(0)).map_err(|e| e.to_string())?;
        let raw = sample_cgauss(&mut rng.fork(1), m, m + k, 1.0).map_err(|e| e.to_string())?;
        let w = Precoder::normalized(raw, k, 1.0).map_err(|e| e.to_string())?;
        let user = i as usize % k;
        let sigma2 = cfg.sigma2_w();
        let h = scene.h_k(user);
        let mc = monte_carlo_sinr(&w, h.view(), user, sigma2, MC_DRAWS, &mut rng.fork(2)).map_err(|e| e.to_string())?;
        let (s, n) = (mc.signal, mc.interference_noise);
        let ratio_se = mc.ratio() * ((s.std_err / s.mean).powi(2) + (n.std_err / n.mean).powi(2)).sqrt();
        let z_sinr = (mc.ratio() - sinr(&w, h.view(), user, sigma2)).abs() / ratio_se.max(1e-15 * mc.ratio());
        let g = &scene.targets[0].g;
        let q = monte_carlo_illumination(&w, g.view(), MC_DRAWS, &mut rng.fork(3)).map_err(|e| e.to_string())?;
        let z_q = q.z_score(illumination(&w, g.view()));
        worst_sinr = worst_sinr.max(z_sinr);
        worst_q = worst_q.max(z_q);
        misses += usize::from(z_sinr > MC_Z_MAX) + usize::from(z_q > MC_Z_MAX);
    }
    Ok(verdict(
        misses == 0,
        format!("{MC_INSTANCES} instances x {MC_DRAWS} draws: max |z| SINR {worst_sinr:.2}, illumination {worst_q:.2}; {misses} beyond 3 SE"),
    ))
}

fn criterion_6() -> Result<Verdict, String> {
    let e = |x: isac_core::Error| x.to_string();
    let gram = |x: &CMat, s: f64| x.matmul(&x.h()).map(|g| g.max_abs_diff(&CMat::identity(x.rows()).scale_re(s)));
    let mut gram_err = 0.0f64;
    for (k, lp) in [(1, 1), (4, 20), (6, 20), (16, 40)] {
        gram_err = gram_err.max(gram(&gen_pilots(k, lp).map_err(e)?, lp as f64).map_err(e)?);
    }
    for (m, lr) in [(2, 2), (16, 32), (8, 24), (16, 50)] {
        gram_err = gram_err.max(gram(&gen_probing(m, lr).map_err(e)?, lr as f64 / m as f64).map_err(e)?);
    }

    let cfg = SceneConfig::default();
    let snd = SoundingConfig { noiseless: true, ..SoundingConfig::default() };
    let sounder = Sounder::new(&snd, cfg.m, cfg.k, cfg.nu2_w()).map_err(e)?;
    let (mut power_err, mut ls_err) = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let rng = RngStream::new(0x1d, seed);
        let scene = sample_scene(&cfg, &mut rng.fork(0)).map_err(e)?;
        let data = sounder.sound(&scene, &mut rng.fork(1)).map_err(e)?;
        let net = NetParams::init(cfg.m, cfg.k, 32, &mut rng.fork(2))
            .with_scaling(InputScaling::noise_whitening(snd.lp, snd.lr, cfg.m, cfg.nu2_w()));
        for pd in [0.1, 1.0, 10.0] {
            let w = precode(&net, &data, pd).map_err(e)?;
            power_err = power_err.max((w.power() / pd - 1.0).abs());
        }
        let h_hat = ls_channel_estimate(&data.y, snd.pu_w(), snd.lp).map_err(e)?;
        ls_err = ls_err.max(h_hat.max_abs_diff(&scene.h) / scene.h.frob_norm());
    }

    let mut mf_err = 0.0f64;
    let probing = gen_probing(cfg.m, snd.lr).map_err(e)?;
    for seed in 0..5 {
        let scene = sample_scene(&SceneConfig { t: 1, ..cfg.clone() }, &mut RngStream::new(0x3f, seed)).map_err(e)?;
        let z = rx_echoes(&scene, &probing, snd.pr_w(), cfg.nu2_w(), false, &mut RngStream::new(0, 0)).map_err(e)?;
        let zt = matched_filter(&z, &probing).map_err(e)?;
        let t = &scene.targets[0];
        let gain = snd.pr_w().sqrt() * snd.lr as f64 / cfg.m as f64;
        let expected = CMat::from_fn(cfg.m, cfg.m, |(i, j)| gain * t.beta * t.g[i].conj() * t.g[j].conj());
        mf_err = mf_err.max(zt.max_abs_diff(&expected) / expected.frob_norm());
    }
    let pass = gram_err <= GRAM_TOL && power_err <= POWER_REL_TOL && ls_err <= LS_TOL && mf_err <= MF_TOL;
    Ok(verdict(
        pass,
        format!("Gram {gram_err:.1e}, power rel {power_err:.1e}, LS rel {ls_err:.1e}, matched filter rel {mf_err:.1e}"),
    ))
}

/// Unit vectors `(cos a, sin a e^{jb})`, all of C^2 up to a global phase.
fn directions(n_a: usize, n_b: usize) -> Vec<[C64; 2]> {
    let mut out = Vec::new();
    for i in 0..=n_a {
        let a = std::f64::consts::FRAC_PI_2 * i as f64 / n_a as f64;
        for j in 0..n_b {
            let b = std::f64::consts::TAU * j as f64 / n_b as f64;
            out.push([C64::new(a.cos(), 0.0), C64::from_polar(a.sin(), b)]);
        }
    }
    out
}

/// Exhaustive search over one communication and one sensing direction. The illumination is
/// linear in the power split and the SINR increases with it, so the split is either the
/// smallest feasible one or all of `P_d`.
fn brute_force(scene: &Scene, gamma: f64, pd: f64, sigma2: f64) -> f64 {
    let proj = |x: &[C64], u: &[C64; 2]| (x[0].conj() * u[0] + x[1].conj() * u[1]).norm_sqr();
    let h = scene.h_k(0).to_vec();
    let g = scene.targets[0].g.to_vec();
    let gh: Vec<(f64, f64)> = directions(60, 120).iter().map(|u| (proj(&g, u), proj(&h, u))).collect();
    let mut best = 0.0f64;
    for &(gc, hc) in &gh {
        for &(gs, hs) in &gh {
            let p_min = gamma * (pd * hs + sigma2) / (hc + gamma * hs);
            if p_min <= pd {
                best = best.max(p_min * gc + (pd - p_min) * gs).max(pd * gc);
            }
        }
    }
    best
}

fn criterion_7() -> Result<Verdict, String> {
    let e = |x: isac_core::Error| x.to_string();
    let cfg = SceneConfig { m: 2, k: 1, t: 1, ..SceneConfig::default() };
    let (gamma_db, pd) = (5.0, 1.0);
    let opt = OptimizerConfig::default();
    let mut worst_toy = 0.0f64;
    for seed in 0..5 {
        let scene = sample_scene(&cfg, &mut RngStream::new(0x70, seed)).map_err(e)?;
        let oracle = brute_force(&scene, db_to_lin(gamma_db), pd, cfg.sigma2_w());
        let got = optimize_precoder(&scene, gamma_db, pd, cfg.sigma2_w(), &opt, &RngStream::new(0x71, seed)).map_err(e)?;
        let rel = if got.feasible { (got.q / oracle - 1.0).abs() } else { f64::INFINITY };
        worst_toy = worst_toy.max(rel);
    }
    let mut worst_k0 = 0.0f64;
    for seed in 0..5 {
        let mut rng = RngStream::new(0x72, seed);
        let m = 2 + seed as usize * 3;
        let theta = rng.uniform(-80.0, -10.0).to_radians();
        let alpha = C64::from_polar(rng.uniform(1e-3, 1e-2), rng.phase());
        let target = Target::new(theta, 10.0, alpha, C64::new(1.0, 0.0), m);
        let scene = Scene { h: CMat::zeros(0, m), targets: vec![target], user_positions: Vec::new() };
        let got = optimize_precoder(&scene, gamma_db, pd, cfg.sigma2_w(), &opt, &RngStream::new(0x73, seed)).map_err(e)?;
        let analytic = pd * alpha.norm_sqr() * m as f64;
        worst_k0 = worst_k0.max((got.q / analytic - 1.0).abs());
    }
    Ok(verdict(
        worst_toy <= ORACLE_REL_TOL && worst_k0 <= K0_REL_TOL,
        format!("toy vs grid oracle max rel {worst_toy:.1e}; K=0 vs P_d|alpha|^2 M max rel {worst_k0:.1e}"),
    ))
}

fn criterion_8() -> Result<Verdict, String> {
    let e = |x: isac_core::Error| x.to_string();
    let grid = angle_grid(-90.0, 90.0, DOA_STEP_DEG);
    let m = 16;
    let probing_cfg = SoundingConfig::default();
    let scene_cfg = SceneConfig::default();
    let range_m = 10.0;
    let amp = scene_cfg.radar_pathloss.gain(range_m).sqrt();

    let mut on_grid_exact = true;
    let quiet = Sounder::new(&SoundingConfig { noiseless: true, ..probing_cfg.clone() }, m, 1, scene_cfg.nu2_w()).map_err(e)?;
    for idx in [40, 100, 247, 360, 361, 555, 700] {
        let theta = grid[idx];
        let tgt = Target::new(theta, range_m, C64::from_polar(amp, 0.3), C64::new(1.0, 0.0), m);
        let scene = Scene { h: CMat::zeros(1, m), targets: vec![tgt], user_positions: vec![[0.0, 0.0]] };
        let data = quiet.sound(&scene, &mut RngStream::new(0, 0)).map_err(e)?;
        let doa = bartlett_doa(&data.z, 1, &grid).map_err(e)?;
        on_grid_exact &= doa.angles[0] == theta;
    }

    // High SNR: receiver noise 30 dB under the default. The noiseless count is reported as the
    // estimator's own limit.
    let high_snr = Sounder::new(&probing_cfg, m, 1, scene_cfg.nu2_w() * HIGH_SNR_NOISE_SCALE).map_err(e)?;
    let [lo, hi] = scene_cfg.target_angle_range_deg;
    let tol = DOA_STEP_DEG.to_radians() + 1e-12;
    let (mut hits, mut hits_noiseless) = (0, 0);
    for trial in 0..DOA_TRIALS {
        let mut rng = RngStream::new(0xd0a, trial);
        let (a, b) = loop {
            let (a, b) = (rng.uniform(lo, hi), rng.uniform(lo, hi));
            if (a - b).abs() >= DOA_MIN_SEP_DEG {
                break if a < b { (a, b) } else { (b, a) };
            }
        };
        let targets = [a, b]
            .iter()
            .map(|&deg| Target::new(deg.to_radians(), range_m, C64::from_polar(amp, rng.phase()), C64::new(1.0, 0.0), m))
            .collect();
        let scene = Scene { h: CMat::zeros(1, m), targets, user_positions: vec![[0.0, 0.0]] };
        for (sounder, count) in [(&high_snr, &mut hits), (&quiet, &mut hits_noiseless)] {
            let data = sounder.sound(&scene, &mut rng.fork(1)).map_err(e)?;
            let doa = bartlett_doa(&data.z, 2, &grid).map_err(e)?;
            let ok = (doa.angles[0] - a.to_radians()).abs() <= tol && (doa.angles[1] - b.to_radians()).abs() <= tol;
            *count += usize::from(ok);
        }
    }
    let rate = hits as f64 / DOA_TRIALS as f64;
    Ok(verdict(
        on_grid_exact && rate >= DOA_SUCCESS,
        format!(
            "on-grid single target exact: {on_grid_exact}; two targets >= {DOA_MIN_SEP_DEG} deg apart in [{lo}, {hi}] deg within {DOA_STEP_DEG} deg: {hits}/{DOA_TRIALS} at high SNR, {hits_noiseless}/{DOA_TRIALS} noiseless"
        ),
    ))
}

/// CSV text without the wall-clock column.
fn metric_columns(path: &Path) -> Result<String, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 9).map(|(_, c)| c).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn criterion_9(dir: &Path) -> Result<Verdict, String> {
    let e = |x: isac_harness::HarnessError| x.to_string();
    let tiny = |sub: &str| {
        let mut cfg = ExperimentConfig::default();
        cfg.scene.m = 8;
        cfg.scene.k = 2;
        cfg.scene.t = 2;
        cfg.network.d = 32;
        cfg.hyperparams.epochs = 3;
        cfg.hyperparams.batches_per_epoch = 2;
        cfg.hyperparams.batch_size = 4;
        cfg.eval.realizations = 4;
        cfg.sweep = Some(Sweep::PdDbw(vec![-5.0, 5.0]));
        cfg.output_dir = dir.join(sub);
        cfg
    };
    let (a, b) = (tiny("det_a"), tiny("det_b"));
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("pool");
    for (cfg, threads) in [(&a, 1), (&b, 2)] {
        pool(threads).install(|| -> Result<(), String> {
            train_to(cfg, None, |_| {}).map_err(e)?;
            cmd_eval(cfg, Some(&cfg.output_dir.join(CHECKPOINT_FILE))).map_err(e)?;
            Ok(())
        })?;
    }
    let same_bytes = |name: &str| -> Result<bool, String> {
        let read = |d: &Path| std::fs::read(d.join(name)).map_err(|e| e.to_string());
        Ok(read(&a.output_dir)? == read(&b.output_dir)?)
    };
    let ckpt = same_bytes(CHECKPOINT_FILE)?;
    let loss = same_bytes(LOSS_FILE)?;
    let csv = metric_columns(&a.output_dir.join("results.csv"))? == metric_columns(&b.output_dir.join("results.csv"))?;
    Ok(verdict(
        ckpt && loss && csv,
        format!("checkpoint identical: {ckpt}; loss history identical: {loss}; metric CSV columns identical: {csv} (1 vs 2 threads)"),
    ))
}

fn criterion_10(reduced: &Result<Reduced, String>) -> Result<Verdict, String> {
    let r = reduced.as_ref().map_err(Clone::clone)?;
    let points = measure(&r.net, &r.cfg, &SCALING_KS, 200).map_err(|e| e.to_string())?;
    let f = fit(&points);
    let b = f.exponent.ok_or("no exponent")?;
    let times = points.iter().map(|p| format!("K={}:{:.3}ms", p.k, p.median_ms)).collect::<Vec<_>>().join(" ");
    Ok(verdict(
        b < SCALING_EXPONENT_MAX,
        format!("{times}; exponent {b:.3}, linear R^2 {:.4}", f.r2_linear.unwrap_or(f64::NAN)),
    ))
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; none apply here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let only: Option<Vec<u32>> = std::env::var("ISAC_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let dir = scratch();
    let reduced = if [1, 2, 3, 10].iter().any(|&n| wanted(n)) {
        train_reduced(&dir)
    } else {
        Err("not trained".into())
    };
    let checks: Vec<(u32, Box<dyn FnOnce() -> Result<Verdict, String> + '_>)> = vec![
        (1, Box::new(|| criterion_1(&dir, &reduced))),
        (2, Box::new(|| criterion_2(&reduced))),
        (3, Box::new(|| criterion_3(&reduced))),
        (4, Box::new(criterion_4)),
        (5, Box::new(criterion_5)),
        (6, Box::new(criterion_6)),
        (7, Box::new(criterion_7)),
        (8, Box::new(criterion_8)),
        (9, Box::new(|| criterion_9(&dir))),
        (10, Box::new(|| criterion_10(&reduced))),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (n, check) in checks.into_iter().filter(|(n, _)| wanted(*n)) {
        ran += 1;
        let v = check().unwrap_or_else(|err| verdict(false, format!("error: {err}")));
        failed += usize::from(!v.pass);
        println!("criterion {n:>2}: {}  {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let _ = std::fs::remove_dir_all(&dir);
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
