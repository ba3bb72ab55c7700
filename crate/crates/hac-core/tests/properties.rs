//! Randomized properties with shrinking: the laws the seeded suites pin at
//! fixed points, re-checked over arbitrary shapes, curvatures, and batch
//! layouts.

use proptest::prelude::*;

use hac_core::autodiff::Graph;
use hac_core::geometry::{
    exp_map_origin, exterior_angle, lorentz_distance, lorentz_inner, GeometryConfig,
};
use hac_core::losses::{
    clip_contrastive_loss, hac_reg_total, lift_batch, negative_alignment_loss,
    performance_preserving_loss, positive_alignment_loss, retain_loss, BatchEmbeddings,
    EmbeddingBatch, UnlearnHyperParams,
};
use hac_core::Tensor;

fn tangent(max_dim: usize, span: f64) -> impl Strategy<Value = Vec<f64>> {
    (1..=max_dim).prop_flat_map(move |d| prop::collection::vec(-span..span, d))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lifted_points_stay_on_the_hyperboloid(
        c in 0.25..4.0f64,
        v in tangent(6, 2.5),
    ) {
        let p = exp_map_origin(&v, c).unwrap();
        let residual = (c * lorentz_inner(&p, &p).unwrap() + 1.0).abs();
        // The rounding floor of the constraint grows with c·time²; 1e-9 is
        // the guarantee inside the working envelope (c ≤ 2, ‖v‖ ≤ 5), and a
        // forward-error bound takes over outside it.
        let floor = 64.0 * f64::EPSILON * (1.0 + c * p.time() * p.time());
        let tol = if c <= 2.0 && norm(&v) <= 5.0 { 1e-9 } else { 1e-9f64.max(floor) };
        prop_assert!(residual <= tol, "|c⟨x,x⟩+1| = {residual} (tol {tol})");
    }

    #[test]
    fn geodesic_distance_is_a_symmetric_premetric(
        c in 0.25..4.0f64,
        (x, y, z) in (1usize..=5).prop_flat_map(|d| {
            let v = || prop::collection::vec(-1.5..1.5f64, d);
            (v(), v(), v())
        }),
    ) {
        let lift = |v: &[f64]| exp_map_origin(v, c).unwrap();
        let (x, y, z) = (lift(&x), lift(&y), lift(&z));
        let dxy = lorentz_distance(&x, &y).unwrap();
        let dyx = lorentz_distance(&y, &x).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - dyx).abs() <= 1e-12, "asymmetry {}", (dxy - dyx).abs());
        let dxz = lorentz_distance(&x, &z).unwrap();
        let dyz = lorentz_distance(&y, &z).unwrap();
        prop_assert!(dxz <= dxy + dyz + 1e-9, "triangle: {dxz} > {dxy} + {dyz}");
    }

    #[test]
    fn deeper_points_on_a_ray_stay_inside_the_cone(
        c in 0.5..2.0f64,
        dir in tangent(5, 1.0).prop_filter("apex away from origin", |v| norm(v) > 0.4),
        depth in 1.2..3.0f64,
    ) {
        let apex = exp_map_origin(&dir, c).unwrap();
        let deeper: Vec<f64> = dir.iter().map(|x| x * depth).collect();
        let member = exp_map_origin(&deeper, c).unwrap();
        let ext = exterior_angle(&member, &apex).unwrap();
        prop_assert!(ext <= 1e-6, "radial exterior angle {ext}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn backward_is_linear_across_loss_combinations(
        rows in (2usize..=4, 2usize..=4).prop_flat_map(|(n, d)| {
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), n)
        }),
        a in 0.1..2.0f64,
        b in 0.1..2.0f64,
    ) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&rows).unwrap());
        let sq = g.mul(x, x).unwrap();
        let quad = g.sum(sq).unwrap();
        let smooth = g.lse(x).unwrap();
        let sa = g.scale(quad, a).unwrap();
        let sb = g.scale(smooth, b).unwrap();
        let combined = g.add(sa, sb).unwrap();

        let gc = g.backward(combined, &[x]).unwrap();
        let g1 = g.backward(quad, &[x]).unwrap();
        let g2 = g.backward(smooth, &[x]).unwrap();
        let lhs = gc.get(x).unwrap().values();
        let rhs: Vec<f64> = g1
            .get(x)
            .unwrap()
            .values()
            .iter()
            .zip(g2.get(x).unwrap().values())
            .map(|(p, q)| a * p + b * q)
            .collect();
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() <= 1e-9, "combined {l} vs summed {r}");
        }
    }

    #[test]
    fn rebuilding_a_graph_reproduces_every_bit(
        rows in (2usize..=4, 2usize..=4).prop_flat_map(|(n, d)| {
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), n)
        }),
    ) {
        let run = |rows: &[Vec<f64>]| {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::from_rows(rows).unwrap());
            let xt = g.transpose(x).unwrap();
            let gram = g.matmul(x, xt).unwrap();
            let act = g.relu(gram).unwrap();
            let loss = g.lse(act).unwrap();
            let grads = g.backward(loss, &[x]).unwrap();
            let bits: Vec<u64> =
                grads.get(x).unwrap().values().iter().map(|v| v.to_bits()).collect();
            (g.value(loss).item().unwrap().to_bits(), bits)
        };
        prop_assert_eq!(run(&rows), run(&rows));
    }
}

fn batch_with_permutation(
) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<bool>, Vec<usize>, f64)> {
    (2usize..=5, 2usize..=4).prop_flat_map(|(n, d)| {
        let rows = move || {
            prop::collection::vec(prop::collection::vec(-1.5..1.5f64, d), n)
                .prop_filter("rows away from zero", |rs| rs.iter().all(|r| norm(r) > 0.3))
        };
        let mask = prop::collection::vec(any::<bool>(), n)
            .prop_filter("mixed mask", |m| m.iter().any(|&b| b) && !m.iter().all(|&b| b));
        let perm = Just((0..n).collect::<Vec<usize>>()).prop_shuffle();
        let tau = prop::sample::select(vec![0.25, 0.5, 1.0]);
        (rows(), rows(), mask, perm, tau)
    })
}

fn loss_values(
    image: &[Vec<f64>],
    text: &[Vec<f64>],
    mask: &[bool],
    tau: f64,
    hyper: bool,
) -> Vec<f64> {
    let geo = GeometryConfig::default();
    let mut g = Graph::new();
    let i = g.leaf(Tensor::from_rows(image).unwrap());
    let t = g.leaf(Tensor::from_rows(text).unwrap());
    let emb = if hyper {
        lift_batch(&mut g, i, t, &geo).unwrap()
    } else {
        BatchEmbeddings::Euclidean { image: i, text: t }
    };
    let batch = EmbeddingBatch::new(&g, emb, mask.to_vec()).unwrap();
    let mut out = vec![
        clip_contrastive_loss(&mut g, batch.embeddings(), tau, &geo).unwrap(),
        retain_loss(&mut g, &batch, tau, &geo).unwrap(),
        negative_alignment_loss(&mut g, &batch, tau, &geo).unwrap(),
        positive_alignment_loss(&mut g, &batch, tau, &geo).unwrap(),
        performance_preserving_loss(&mut g, &batch, tau, &geo).unwrap(),
    ];
    if hyper {
        let hp = UnlearnHyperParams {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            epsilon: 0.1,
            omega_r: 0.2,
            omega_f: 1.0,
            lambda_reg: 0.1,
            tau,
        };
        out.push(hac_reg_total(&mut g, &batch, &hp, &geo).unwrap());
    }
    out.into_iter().map(|n| g.value(n).item().unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Every loss is a mean over pairs, so reordering the batch (applying one
    // permutation to images, texts, and the forget mask together) must not
    // change any value beyond summation-order noise.
    #[test]
    fn losses_ignore_batch_order((image, text, mask, perm, tau) in batch_with_permutation()) {
        let pick = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            perm.iter().map(|&i| rows[i].clone()).collect()
        };
        let mask_p: Vec<bool> = perm.iter().map(|&i| mask[i]).collect();
        for hyper in [false, true] {
            let base = loss_values(&image, &text, &mask, tau, hyper);
            let shuffled = loss_values(&pick(&image), &pick(&text), &mask_p, tau, hyper);
            for (b, s) in base.iter().zip(&shuffled) {
                prop_assert!((b - s).abs() <= 1e-9, "loss moved under permutation: {b} vs {s}");
            }
        }
    }
}
