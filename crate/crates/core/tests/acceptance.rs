//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfe_patchmatch::aggregate::{
    bilinear, dynamic_aggregate, fuse_multiscale, softmax_weights, standard_aggregate, OffsetField, TapKernel,
};
use cfe_patchmatch::io;
use cfe_patchmatch::matcher::{Coord, MatchConfig, Nnf, PositionMap, RelevanceMap};
use cfe_patchmatch::oracle::{brute_force_nnf, cost_model, enumerated_cost};
use cfe_patchmatch::pipeline::{self, KernelKind, RunConfig};
use cfe_patchmatch::pyramid::{run_cfe, run_cfe_observed, PyramidConfig};
use cfe_patchmatch::synth;
use cfe_patchmatch::tensor::{extract_descriptors, make_ref_pyramid, DescriptorConfig, FeatureMap, Image};

type Outcome = Result<(bool, String), String>;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn astronaut() -> Image {
    io::read_image(&data_dir().join("astronaut_256.pgm")).expect("bundled astronaut image")
}

fn benchmark_config() -> RunConfig {
    let dir = data_dir().join("benchmark");
    RunConfig { lr_path: Some(dir.join("lr.pgm")), ref_path: Some(dir.join("ref.pgm")), ..Default::default() }
}

struct Instance {
    name: String,
    k: FeatureMap,
    q: FeatureMap,
    seed: u64,
}

/// Ten planted translations of value-noise textures and ten pairs of
/// independent crops of the astronaut image, sides 32 to 64.
fn instances() -> Vec<Instance> {
    let desc = DescriptorConfig::default();
    let astro = astronaut();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    for i in 0..10u64 {
        let s = 32 + 8 * (i as usize % 5);
        let q_side = s + 16;
        let texture = synth::value_noise(1, q_side, q_side, 8, 100 + i);
        let (dy, dx) = (rng.random_range(0..=16), rng.random_range(0..=16));
        let k_img = texture.crop(dy, dx, s, s).unwrap();
        out.push(Instance {
            name: format!("translation {s}x{s} by ({dy},{dx})"),
            k: extract_descriptors(&k_img, &desc).unwrap(),
            q: extract_descriptors(&texture, &desc).unwrap(),
            seed: i,
        });
    }
    for i in 0..10u64 {
        let s = 32 + 8 * (i as usize % 5);
        let q_side = s + 16;
        let (kr, kc) = (rng.random_range(0..=256 - s), rng.random_range(0..=256 - s));
        let (qr, qc) = (rng.random_range(0..=256 - q_side), rng.random_range(0..=256 - q_side));
        out.push(Instance {
            name: format!("astronaut {s}x{s} at ({kr},{kc}) vs {q_side}x{q_side} at ({qr},{qc})"),
            k: extract_descriptors(&astro.crop(kr, kc, s, s).unwrap(), &desc).unwrap(),
            q: extract_descriptors(&astro.crop(qr, qc, q_side, q_side).unwrap(), &desc).unwrap(),
            seed: 10 + i,
        });
    }
    out
}

fn schedule(seed: u64) -> PyramidConfig {
    PyramidConfig { rng_seed: seed, ..Default::default() }
}

fn oracle_convergence(insts: &[Instance]) -> Outcome {
    let mut gaps = Vec::new();
    let mut cfe_time = 0.0;
    let mut worst = (0.0, String::new());
    let mut family = [(0.0, 0usize); 2];
    for inst in insts {
        let oracle = brute_force_nnf(&inst.k, &inst.q, 1e-12).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let out =
            run_cfe(&inst.k, &inst.q, &schedule(inst.seed), &MatchConfig::default()).map_err(|e| e.to_string())?;
        cfe_time += start.elapsed().as_secs_f64();
        for (s_star, s) in oracle.nnf.relevance.values().iter().zip(out.nnf.relevance.values()) {
            let g = s_star - s;
            if g > worst.0 {
                worst = (g, inst.name.clone());
            }
            gaps.push(g);
            let f = &mut family[usize::from(inst.name.starts_with("astronaut"))];
            (f.0, f.1) = (f.0 + g, f.1 + 1);
        }
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let max = gaps.iter().cloned().fold(0.0, f64::max);
    let over = gaps.iter().filter(|&&g| g > 0.05).count();
    let ok = insts.len() >= 20 && mean <= 0.01 && max <= 0.05 && cfe_time < 10.0;
    Ok((
        ok,
        format!(
            "{} instances, mean gap {mean:.5} (<= 0.01; translations {:.5}, natural crops {:.5}), max gap {max:.4} (<= 0.05) in {}, {over} of {} positions above 0.05, matcher time {cfe_time:.2} s (< 10)",
            insts.len(),
            family[0].0 / family[0].1 as f64,
            family[1].0 / family[1].1 as f64,
            worst.1,
            gaps.len()
        ),
    ))
}

fn monotonicity(insts: &[Instance]) -> Outcome {
    let mut steps = 0u64;
    let mut violations = 0u64;
    let mut extra: Vec<Instance> = (0..5u64)
        .map(|i| Instance {
            name: format!("random {i}"),
            k: synth::random_features(6, 40, 48, 500 + 2 * i),
            q: synth::random_features(6, 56, 44, 501 + 2 * i),
            seed: 500 + i,
        })
        .collect();
    extra.extend(insts.iter().map(|i| Instance { name: i.name.clone(), k: i.k.clone(), q: i.q.clone(), seed: i.seed }));
    for inst in &extra {
        let mut prev: Option<(usize, Vec<f64>)> = None;
        run_cfe_observed(&inst.k, &inst.q, &schedule(inst.seed), &MatchConfig::default(), |ev| {
            let cur = ev.state.relevance.values();
            violations += cur.iter().filter(|v| !(-1.0..=1.0).contains(*v)).count() as u64;
            if ev.step.is_some() {
                steps += 1;
                let (level, before) = prev.as_ref().expect("level entry precedes steps");
                assert_eq!(*level, ev.level);
                violations += cur.iter().zip(before).filter(|(a, b)| a < b).count() as u64;
            }
            prev = Some((ev.level, cur.to_vec()));
        })
        .map_err(|e| e.to_string())?;
    }
    Ok((violations == 0, format!("{} instances, {steps} propagation steps, {violations} violations", extra.len())))
}

fn complexity(report: &pipeline::BenchReport) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for size in [64, 128, 250] {
        for name in ["single-scale", "cfe"] {
            let row = report.rows.iter().find(|r| r.size == size && r.matcher == name);
            let Some(row) = row else {
                ok = false;
                lines.push(format!("{name} {size}: missing"));
                continue;
            };
            let matches = row.measured == Some(row.predicted);
            ok &= matches;
            lines.push(format!("{name} {size}²: {}{}", row.predicted, if matches { "" } else { " MISMATCH" }));
        }
    }
    let single = cost_model(64, 64, &PyramidConfig::single_scale(10, 0)).map_err(|e| e.to_string())?;
    let closed = 18 * 64 * 64 * 10 * 3;
    ok &= single.propagation_evals == closed;
    Ok((ok, format!("measured == predicted: {}", lines.join(", "))))
}

fn speedup(report: &pipeline::BenchReport) -> Outcome {
    let row = report.rows.iter().find(|r| r.size == 250 && r.matcher == "cfe").ok_or("no 250 cfe row")?;
    let measured = row.measured.ok_or("cfe count missing")?;
    let ratio = enumerated_cost((250, 250), (250, 250)) as f64 / measured as f64;
    Ok((ratio >= 50.0, format!("enumerated / cfe at 250x250 = {ratio:.2} (>= 50)")))
}

fn non_increasing(csv: &str) -> Result<(bool, usize), String> {
    let mut rows = csv.lines();
    if rows.next() != Some("evals,mse") {
        return Err("bad CSV header".into());
    }
    let mse: Vec<f64> = rows
        .map(|l| l.split(',').nth(1).and_then(|v| v.parse().ok()).ok_or(format!("bad CSV row {l}")))
        .collect::<Result<_, _>>()?;
    Ok((mse.windows(2).all(|w| w[1] <= w[0]), mse.len()))
}

fn convergence_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = pipeline::cmd_convergence(&benchmark_config(), dir.path()).map_err(|e| e.to_string())?;
    let read = |f: &str| fs::read_to_string(dir.path().join(f)).map_err(|e| e.to_string());
    let (single_mono, single_n) = non_increasing(&read("single_scale.csv")?)?;
    let (cfe_mono, cfe_n) = non_increasing(&read("cfe.csv")?)?;
    let ordered = match (s.cfe.evals_to_threshold, s.single_scale.evals_to_threshold) {
        (Some(c), Some(m)) => c < m,
        (Some(_), None) => true,
        _ => false,
    };
    let show = |v: Option<u64>| v.map_or(String::from("never"), |v| v.to_string());
    Ok((
        ordered && single_mono && cfe_mono,
        format!(
            "evals to MSE <= 0.01: cfe {} < single-scale {}; traces non-increasing: single-scale {single_mono} ({single_n} points), cfe {cfe_mono} ({cfe_n} points)",
            show(s.cfe.evals_to_threshold),
            show(s.single_scale.evals_to_threshold)
        ),
    ))
}

fn aggregation_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut unequal = 0;
    for i in 0..100u64 {
        let ch = rng.random_range(1..=4);
        let (vh, vw) = (rng.random_range(3..20), rng.random_range(3..20));
        let (hh, hw) = (rng.random_range(1..12), rng.random_range(1..12));
        let v = synth::random_features(ch, vh, vw, 1000 + i);
        let coords = (0..hh * hw).map(|_| Coord::new(rng.random_range(0..vh as u32), rng.random_range(0..vw as u32)));
        let h = PositionMap::new(hh, hw, coords.collect()).unwrap();
        let kernel = if i % 2 == 0 {
            TapKernel::shared(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        } else {
            TapKernel::per_channel((0..ch).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect())
                .unwrap()
        };
        let a = standard_aggregate(&v, &h, &kernel).map_err(|e| e.to_string())?;
        let b = dynamic_aggregate(&v, &h, &OffsetField::zeros(hh, hw), &kernel).map_err(|e| e.to_string())?;
        if a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            unequal += 1;
        }
    }

    let mut ramp_err: f64 = 0.0;
    for i in 0..50 {
        let (a, b, c) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (h, w) = (5 + i % 7, 6 + i % 5);
        let v = FeatureMap::from_fn(1, h, w, |r, col, _| a * r as f64 + b * col as f64 + c).unwrap();
        for _ in 0..100 {
            let y = rng.random_range(0.0..(h - 1) as f64);
            let x = rng.random_range(0.0..(w - 1) as f64);
            ramp_err = ramp_err.max((bilinear(&v, y, x, 0) - (a * y + b * x + c)).abs());
        }
    }

    let mut sum_err: f64 = 0.0;
    for i in 0..50u64 {
        let n = 1 + (i as usize % 6);
        let (h, w) = (7, 9);
        let spread = [1.0, 10.0, 700.0][i as usize % 3];
        let ss: Vec<RelevanceMap> = (0..n)
            .map(|_| RelevanceMap::new(h, w, (0..h * w).map(|_| rng.random_range(-spread..spread)).collect()).unwrap())
            .collect();
        let ws = softmax_weights(&ss).map_err(|e| e.to_string())?;
        for p in 0..h * w {
            sum_err = sum_err.max((ws.iter().map(|m| m.values()[p]).sum::<f64>() - 1.0).abs());
        }
    }
    Ok((
        unequal == 0 && ramp_err <= 1e-6 && sum_err <= 1e-9,
        format!(
            "zero-offset dynamic != standard on {unequal}/100 instances, bilinear ramp error {ramp_err:.1e} (<= 1e-6), softmax sum error {sum_err:.1e} (<= 1e-9)"
        ),
    ))
}

/// Share of positions where the fused softmax weight peaks at `target`.
fn selection_rate(ys: &[FeatureMap], ss: &[RelevanceMap], target: usize) -> Result<f64, String> {
    let (_, weights) = fuse_multiscale(ys, ss, None).map_err(|e| e.to_string())?;
    let n = weights[0].values().len();
    let hits = (0..n)
        .filter(|&p| {
            (0..weights.len()).max_by(|&a, &b| weights[a].values()[p].total_cmp(&weights[b].values()[p]))
                == Some(target)
        })
        .count();
    Ok(hits as f64 / n as f64)
}

fn scale_selection() -> Outcome {
    let desc = DescriptorConfig::default();
    let (mut converged, mut matched) = (Vec::new(), Vec::new());
    for target in 0..5usize {
        let base = synth::value_noise(1, 120, 120, 8, 300 + target as u64);
        let refs = make_ref_pyramid(&base, 0.8, 5, 8).map_err(|e| e.to_string())?;
        let qs: Vec<FeatureMap> = refs.iter().map(|r| extract_descriptors(r, &desc).unwrap()).collect();
        let q = &qs[target];
        let (side, r0, c0) = (40, (q.height() - 40) / 2, (q.width() - 40) / 2);
        let k = FeatureMap::from_fn(q.channels(), side, side, |r, c, ch| q.get(r0 + r, c0 + c, ch)).unwrap();
        let (mut ys, mut ss, mut ys_cfe, mut ss_cfe) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, (qi, ri)) in qs.iter().zip(&refs).enumerate() {
            let v = ri.to_feature_map();
            let exact = brute_force_nnf(&k, qi, 1e-12).map_err(|e| e.to_string())?.nnf;
            ys.push(standard_aggregate(&v, &exact.positions, &TapKernel::uniform()).unwrap());
            ss.push(exact.relevance);
            let out = run_cfe(&k, qi, &schedule(i as u64), &MatchConfig::default()).map_err(|e| e.to_string())?;
            ys_cfe.push(standard_aggregate(&v, &out.nnf.positions, &TapKernel::uniform()).unwrap());
            ss_cfe.push(out.nnf.relevance);
        }
        converged.push(selection_rate(&ys, &ss, target)?);
        matched.push(selection_rate(&ys_cfe, &ss_cfe, target)?);
    }
    let worst = converged.iter().cloned().fold(1.0, f64::min);
    let pct = |v: &[f64]| v.iter().map(|x| format!("{:.1}%", 100.0 * x)).collect::<Vec<_>>().join(" ");
    Ok((
        worst >= 0.99,
        format!(
            "converged fields: copied scale selected at {} (each >= 99%); coarse-to-fine fields for reference: {}",
            pct(&converged),
            pct(&matched)
        ),
    ))
}

fn transfer_sanity() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reference = astronaut().crop(64, 64, 96, 96).unwrap();
    let ref_path = tmp.path().join("ref.pgm");
    io::write_image(&ref_path, &reference).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig {
        lr_path: Some(ref_path.clone()),
        ref_path: Some(ref_path.clone()),
        upscale: 1,
        n: 1,
        ..Default::default()
    };
    cfg.aggregation.kernel = KernelKind::Delta;
    let oracle_dir = tmp.path().join("oracle");
    pipeline::cmd_oracle(&cfg, &oracle_dir, None).map_err(|e| e.to_string())?;
    let field: Nnf = io::read_nnf(&oracle_dir.join(pipeline::oracle_file_name(0))).map_err(|e| e.to_string())?;
    let non_identity = field
        .positions
        .coords()
        .iter()
        .enumerate()
        .filter(|(i, c)| (c.row as usize, c.col as usize) != (i / 96, i % 96))
        .count();
    let nnf_dir = tmp.path().join("nnf");
    fs::create_dir_all(&nnf_dir).map_err(|e| e.to_string())?;
    io::write_nnf(&nnf_dir.join(pipeline::nnf_file_name(0)), &field).map_err(|e| e.to_string())?;
    let out = tmp.path().join("identity.pgm");
    pipeline::cmd_transfer(&cfg, &out, Some(&nnf_dir), None).map_err(|e| e.to_string())?;
    let identical = fs::read(&out).map_err(|e| e.to_string())? == fs::read(&ref_path).map_err(|e| e.to_string())?;

    let bench = benchmark_config();
    let hr = data_dir().join("benchmark").join("hr.pgm");
    let report = pipeline::cmd_transfer(&bench, &tmp.path().join("bench.pgm"), None, Some(&hr))
        .map_err(|e| e.to_string())?
        .ok_or("no PSNR report")?;
    let db = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
    let (pt, pb) = (db(report.psnr_transfer), db(report.psnr_bicubic));
    Ok((
        identical && pt >= pb,
        format!(
            "identity transfer reproduces Ref: {identical} ({non_identity} converged matches off the diagonal); benchmark PSNR transfer {pt:.2} dB vs bicubic {pb:.2} dB (needs >=)"
        ),
    ))
}

fn files_in(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        out.insert(entry.file_name().to_string_lossy().into_owned(), fs::read(entry.path()).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let hr = synth::value_noise(1, 64, 64, 8, 41);
    let lr = cfe_patchmatch::tensor::bicubic_resize(&hr, 16, 16).unwrap();
    let reference = synth::value_noise(1, 80, 80, 8, 42);
    for (name, img) in [("hr.pgm", &hr), ("lr.pgm", &lr), ("ref.pgm", &reference)] {
        io::write_image(&tmp.path().join(name), img).map_err(|e| e.to_string())?;
    }
    let p = |f: &str| tmp.path().join(f).to_string_lossy().into_owned();
    let run = |threads: usize, sub: &str, extra: &[String]| -> Result<PathBuf, String> {
        let out = tmp.path().join(format!("{sub}_t{threads}"));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cfepm"));
        cmd.arg(sub).args(["--lr", &p("lr.pgm"), "--ref", &p("ref.pgm"), "--seed", "7", "--n", "3"]);
        cmd.args(["--threads", &threads.to_string()]).args(extra);
        let target = if sub == "transfer" { out.join("out.pgm") } else { out.clone() };
        cmd.arg("--out").arg(&target);
        let status = cmd.output().map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("{sub} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        Ok(out)
    };
    let mut checked = Vec::new();
    let mut ok = true;
    let match_ref = run(1, "match", &[])?;
    let subs: Vec<(&str, Vec<String>)> = vec![
        ("match", vec!["--dump-levels".into()]),
        ("transfer", vec!["--hr".into(), p("hr.pgm")]),
        ("convergence", vec![]),
        ("bench", vec!["--sizes".into(), "32,64".into()]),
        ("oracle", vec!["--compare".into(), match_ref.to_string_lossy().into_owned()]),
    ];
    for (sub, extra) in &subs {
        let a = files_in(&run(1, sub, extra)?);
        let b = files_in(&run(4, sub, extra)?);
        let same = !a.is_empty() && a == b;
        ok &= same;
        checked.push(format!("{sub} {} files {}", a.len(), if same { "identical" } else { "DIFFER" }));
    }
    Ok((ok, format!("--threads 1 vs 4: {}", checked.join(", "))))
}

fn main() {
    let insts = instances();
    let bench_cfg = RunConfig::default();
    let report = pipeline::bench(&bench_cfg);
    let results: Vec<(&str, Outcome)> = vec![
        ("oracle convergence", oracle_convergence(&insts)),
        ("monotonicity", monotonicity(&insts)),
        ("complexity exactness", report.as_ref().map_err(|e| e.to_string()).and_then(complexity)),
        ("speedup ratio", report.as_ref().map_err(|e| e.to_string()).and_then(speedup)),
        ("convergence ordering", convergence_ordering()),
        ("aggregation equivalence", aggregation_equivalence()),
        ("scale selection", scale_selection()),
        ("transfer sanity", transfer_sanity()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.into_iter().enumerate() {
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!ok);
        println!("{} criterion {} {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
}
