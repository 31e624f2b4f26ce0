//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use esd_universality::concentration::{moment_check_t5, rademacher_t5_exact};
use esd_universality::ensembles::EntryLaw;
use esd_universality::experiment::{run, ExperimentSpec, RunManifest};
use esd_universality::linalg::{
    smw_rank1_trace_delta, smw_rankq_trace, sym_eigenvalues, RectMatrix, SymMatrix, UpperHalfPoint,
};
use esd_universality::rng::SeededRng;
use esd_universality::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn spec_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../specs")
        .join(name)
}

fn run_spec(name: &str) -> (bool, String, RunManifest) {
    let spec = ExperimentSpec::from_path(&spec_path(name)).expect("spec parses");
    let dir = tempfile::tempdir().expect("tempdir");
    let outcome = run(&spec, Some(dir.path())).expect("run succeeds");
    (outcome.pass, outcome.summary, outcome.manifest)
}

fn spec_outcome(names: &[&str]) -> Outcome {
    let mut pass = true;
    let mut detail = String::new();
    for name in names {
        let (ok, summary, _) = run_spec(name);
        pass &= ok;
        let compact: Vec<String> = summary
            .lines()
            .map(|l| l.split('\t').collect::<Vec<_>>().join(" "))
            .collect();
        detail.push_str(&format!("[{name}: {}] ", compact.join("; ")));
    }
    Outcome { pass, detail }
}

fn t5_with_exact_case() -> Outcome {
    let mut out = spec_outcome(&["t5_battery.json"]);
    let a = RectMatrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
    let exact = rademacher_t5_exact(&a).unwrap();
    let rhs = 2.0 * 1.0 * esd_universality::concentration::frobenius_sq(&a);
    let mc = moment_check_t5(&EntryLaw::Rademacher {}, &a, 1.0, 1000, 9).unwrap();
    let tight = exact == 1.0 && rhs == 1.0 && mc.lhs_estimate == 1.0;
    out.pass &= tight;
    out.detail.push_str(&format!(
        "[p=2 exact lhs={exact} rhs={rhs} mc={}]",
        mc.lhs_estimate
    ));
    out
}

fn random_sym(p: usize, rng: &mut SeededRng) -> SymMatrix {
    let g = nalgebra::DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::gram(&g, 1.0 / p as f64).unwrap()
}

fn eig_trace(c: &SymMatrix, z: UpperHalfPoint) -> Complex64 {
    sym_eigenvalues(c)
        .unwrap()
        .iter()
        .map(|&l| (Complex64::new(l, 0.0) - z.to_complex()).inv())
        .sum()
}

fn smw_equivalence() -> Outcome {
    let mut worst1: f64 = 0.0;
    let mut worstq: f64 = 0.0;
    for i in 0..500u64 {
        let mut rng = SeededRng::for_path(8, &[i]);
        let p = rng.random_range(2..=24);
        let q = rng.random_range(1..=p.min(6));
        let z =
            UpperHalfPoint::new(rng.random_range(-1.0..4.0), rng.random_range(0.05..2.0)).unwrap();
        let c = random_sym(p, &mut rng);
        let base = eig_trace(&c, z);

        let w: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let mut updated = c.as_matrix().clone();
        let wv = nalgebra::DVector::from_vec(w.clone());
        updated += &wv * wv.transpose();
        let full = eig_trace(&SymMatrix::new(updated).unwrap(), z);
        let delta = smw_rank1_trace_delta(&c, &w, z).unwrap();
        worst1 = worst1.max((base + delta - full).norm() / full.norm());

        let u = RectMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal)).unwrap();
        let updated = c.as_matrix() + u.as_matrix() * u.as_matrix().transpose();
        let full = eig_trace(&SymMatrix::new(updated).unwrap(), z);
        let smw = smw_rankq_trace(&c, &u, z).unwrap();
        worstq = worstq.max((smw - full).norm() / full.norm());
    }
    Outcome {
        pass: worst1 <= 1e-8 && worstq <= 1e-8,
        detail: format!("max relative error rank-1 {worst1:.2e}, rank-q {worstq:.2e}"),
    }
}

fn determinism() -> Outcome {
    let names = [
        "mp_y05.json",
        "universality_mds_m3.json",
        "lemma_fuzz.json",
        "a1_negative_control.json",
        "diagnostics_mds_m3.json",
    ];
    let mut pass = true;
    let mut files = 0;
    for name in names {
        let digests: Vec<_> = [1usize, 8, 1]
            .iter()
            .map(|&t| {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .unwrap();
                pool.install(|| run_spec(name).2.outputs)
            })
            .collect();
        files += digests[0].len();
        pass &= digests.windows(2).all(|w| w[0] == w[1]) && !digests[0].is_empty();
    }
    Outcome {
        pass,
        detail: format!(
            "{} specs, {files} output digests identical under 1, 8, 1 workers",
            names.len()
        ),
    }
}

type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (
            "MP convergence (KS)",
            Box::new(|| spec_outcome(&["mp_y05.json"])),
        ),
        (
            "universality gap at z=i",
            Box::new(|| spec_outcome(&["universality_rademacher.json"])),
        ),
        (
            "m-dependent and linear-process universality",
            Box::new(|| {
                spec_outcome(&[
                    "universality_mds_m3.json",
                    "universality_moving_sum_m2.json",
                ])
            }),
        ),
        (
            "quadratic-form probability bound battery",
            Box::new(|| spec_outcome(&["prop1_battery.json"])),
        ),
        (
            "Rademacher second-moment battery",
            Box::new(t5_with_exact_case),
        ),
        (
            "moment ratio scaling",
            Box::new(|| spec_outcome(&["concentration_scaling.json"])),
        ),
        (
            "resolvent lemma fuzz",
            Box::new(|| spec_outcome(&["lemma_fuzz.json"])),
        ),
        ("SMW oracle equivalence", Box::new(smw_equivalence)),
        (
            "A1 negative control",
            Box::new(|| spec_outcome(&["a1_negative_control.json"])),
        ),
        ("determinism across worker counts", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({:.1}s) {}",
            i + 1,
            if outcome.pass { "PASS" } else { "FAIL" },
            name,
            start.elapsed().as_secs_f64(),
            outcome.detail.trim_end()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
