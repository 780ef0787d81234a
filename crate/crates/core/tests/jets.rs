use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttpinn_core::check::{jet_fd_error, jet_suite};
use ttpinn_core::{Jet2, JetBatch, MlpSpec, Pinn, Tape, TtShape, Value};

/// Random expression over x and y built from add, mul, scale and sin.
enum Expr {
    X,
    Y,
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Scale(Box<Expr>, f64),
    Sin(Box<Expr>),
}

impl Expr {
    fn random(rng: &mut ChaCha8Rng, depth: usize) -> Self {
        let leaf = depth == 0 || rng.random_bool(0.2);
        if leaf {
            return match rng.random_range(0..3) {
                0 => Expr::X,
                1 => Expr::Y,
                _ => Expr::Const(rng.random_range(-2.0..2.0)),
            };
        }
        let sub = |rng: &mut ChaCha8Rng| Box::new(Expr::random(rng, depth - 1));
        match rng.random_range(0..4) {
            0 => Expr::Add(sub(rng), sub(rng)),
            1 => Expr::Mul(sub(rng), sub(rng)),
            2 => Expr::Scale(sub(rng), rng.random_range(-2.0..2.0)),
            _ => Expr::Sin(sub(rng)),
        }
    }

    fn jet(&self, x: f64, y: f64) -> Jet2 {
        match self {
            Expr::X => Jet2::var_x(x),
            Expr::Y => Jet2::var_y(y),
            Expr::Const(c) => Jet2::constant(*c),
            Expr::Add(a, b) => a.jet(x, y) + b.jet(x, y),
            Expr::Mul(a, b) => a.jet(x, y) * b.jet(x, y),
            Expr::Scale(a, c) => a.jet(x, y).scale(*c),
            Expr::Sin(a) => a.jet(x, y).sin(),
        }
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::X => x,
            Expr::Y => y,
            Expr::Const(c) => *c,
            Expr::Add(a, b) => a.value(x, y) + b.value(x, y),
            Expr::Mul(a, b) => a.value(x, y) * b.value(x, y),
            Expr::Scale(a, c) => a.value(x, y) * c,
            Expr::Sin(a) => a.value(x, y).sin(),
        }
    }
}

#[test]
fn random_expressions_match_finite_differences() {
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let e = Expr::random(&mut rng, 4);
        let (x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let j = e.jet(x, y);
        let f0 = e.value(x, y);
        assert!((j.v - f0).abs() <= 1e-14 * (1.0 + f0.abs()));
        let (fxp, fxm) = (e.value(x + h, y), e.value(x - h, y));
        let (fyp, fym) = (e.value(x, y + h), e.value(x, y - h));
        let checks = [
            (j.dx, (fxp - fxm) / (2.0 * h), 1e-6),
            (j.dy, (fyp - fym) / (2.0 * h), 1e-6),
            (j.dxx, (fxp - 2.0 * f0 + fxm) / (h * h), 1e-4),
            (j.dyy, (fyp - 2.0 * f0 + fym) / (h * h), 1e-4),
        ];
        for (i, (exact, fd, tol)) in checks.into_iter().enumerate() {
            assert!((exact - fd).abs() <= tol * (1.0 + exact.abs()), "case {case} channel {i}: {exact} vs {fd}");
        }
    }
}

#[test]
fn linear_layer_acts_channelwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (out_dim, in_dim, points) = (3, 4, 5);
    let inputs = JetBatch::from_fn(in_dim, points, |_, _| {
        Jet2::new(rng.random(), rng.random(), rng.random(), rng.random(), rng.random())
    });
    let w: Vec<f64> = (0..out_dim * in_dim).map(|i| (i as f64 * 0.7).cos()).collect();
    let mut store = ttpinn_core::ParamStore::new();
    let wid = store.register("w", vec![out_dim, in_dim], w.clone()).unwrap();
    let mut tape = Tape::new(&store);
    let x = tape.constant(Value::Jets(inputs.clone()));
    let wn = tape.param(wid).unwrap();
    let y = tape.affine(wn, None, x).unwrap();
    let out = tape.value(y).unwrap().as_jets().unwrap().clone();
    for i in 0..out_dim {
        for p in 0..points {
            let got = out.get(i, p).channels();
            for c in 0..5 {
                let want: f64 = (0..in_dim).map(|k| w[i * in_dim + k] * inputs.get(k, p).channels()[c]).sum();
                assert!((got[c] - want).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn network_jets_match_finite_differences_at_1000_points() {
    let suite = jet_suite(1000, 7);
    assert!(suite.passed, "{}", suite.detail);
}

#[test]
fn jets_are_checked_without_the_boundary_mask_too() {
    let mut spec = MlpSpec::tt(TtShape::uniform(vec![4, 4], vec![4, 4], 2).unwrap(), 1);
    spec.hard_bc = false;
    let net = Pinn::init(spec, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points: Vec<(f64, f64)> = (0..200).map(|_| (rng.random(), rng.random())).collect();
    assert!(jet_fd_error(&net, &points).unwrap() <= 1e-4);
}

#[test]
fn boundary_values_vanish_under_hard_constraint() {
    let net = Pinn::init(MlpSpec::tt(TtShape::uniform(vec![4, 4], vec![4, 4], 3).unwrap(), 2), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points: Vec<(f64, f64)> = (0..1000)
        .map(|i| {
            let t: f64 = rng.random();
            match i % 4 {
                0 => (t, 0.0),
                1 => (t, 1.0),
                2 => (0.0, t),
                _ => (1.0, t),
            }
        })
        .collect();
    for u in net.solution_batch(&points).unwrap() {
        assert!(u.v.abs() <= 1e-15);
    }
    for u in net.predict(&points) {
        assert!(u.abs() <= 1e-15);
    }
}
