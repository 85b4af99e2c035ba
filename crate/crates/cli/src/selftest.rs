//! Fast smoke checks over the library's core laws.

use attrsel::image::Image;
use attrsel::metrics::trapezoid_auc;
use attrsel::model::LayeredModel;
use attrsel::partition::{grid_candidates, slic_labels, SaliencyMap};
use attrsel::submodular::{brute_force, greedy, lazy_greedy, Coverage};
use attrsel::tensor::Tensor;
use attrsel::uncertainty::{modulation_factor, DescriptorStats, Descriptor, FeatureStats};
use attrsel::{Error, Result};

fn gradient_check() -> Result<bool> {
    let model = LayeredModel::reference_cnn([1, 8, 8], 3, 1)?;
    let image = Tensor::new(vec![1, 8, 8], (0..64).map(|i| ((i * 37) % 64) as f64 / 64.0).collect())?;
    let target = Tensor::one_hot(3, 2);
    let inputs = model.graph_inputs(&image, &target, model.params());
    let fwd = model.graph().forward(&inputs)?;
    let grads = model.graph().backward(&fwd, model.selected_logit_node())?;
    let analytic = grads.wrt(model.input_node());
    let numeric =
        model
            .graph()
            .finite_difference(&inputs, model.selected_logit_node(), model.input_node(), 1e-5)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .all(|(a, n)| (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-3)))
}

fn greedy_bound() -> Result<bool> {
    for i in 0..10 {
        let c = Coverage::random(0, i, 10);
        let g = greedy(&c, 4)?;
        let (_, opt) = brute_force(&c, 4)?;
        if *g.objective_values.last().expect("k steps") < 0.6321205588 * opt
            || lazy_greedy(&c, 4)?.order != g.order
        {
            return Ok(false);
        }
    }
    Ok(true)
}

fn modulation() -> Result<bool> {
    let stats = FeatureStats {
        centroid: vec![0.0, 0.0],
        rho0: 1.0,
    };
    for d in [0.0, 0.5, 1.0, 3.0, 1e3] {
        let u = modulation_factor(&stats, &[d, 0.0], 0.5, 2.0)?;
        if !(u > 0.5 && u < 1.5) || (d == 1.0 && u != 1.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn mahalanobis() -> Result<bool> {
    let s = DescriptorStats::new(vec![0.0, 0.0], vec![vec![4.0, 0.0], vec![0.0, 1.0]], 0.0)?;
    Ok(s.mahalanobis(&Descriptor { values: vec![2.0, 0.0] })? == 1.0)
}

fn partitions() -> Result<bool> {
    let img = Image::new(1, 16, 16, (0..256).map(|p| ((p * 7919) % 256) as f64 / 255.0).collect())?;
    let sal = SaliencyMap::new(16, 16, img.data().to_vec())?;
    let cs = grid_candidates(&img, &sal, 4, 4, &[0.5])?;
    let grid_ok = cs.elements().iter().map(|e| e.area).sum::<usize>() == 256
        && cs.elements().iter().all(|e| e.regions.len() == 4);
    let labels = slic_labels(&img, 6, 0.1, 5)?;
    Ok(grid_ok && labels.len() == 256)
}

fn auc() -> Result<bool> {
    Ok(trapezoid_auc(&[0.0, 0.5, 1.0], &[0.0, 1.0, 1.0])? == 0.75)
}

pub fn run() -> Result<()> {
    let checks: [(&str, fn() -> Result<bool>); 6] = [
        ("gradients match finite differences", gradient_check),
        ("greedy reaches the 1-1/e bound", greedy_bound),
        ("modulation stays in its envelope", modulation),
        ("mahalanobis hand case", mahalanobis),
        ("partitions cover the image", partitions),
        ("trapezoid area", auc),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let ok = check()?;
        println!("{} {name}", if ok { "ok  " } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} self-checks failed")));
    }
    Ok(())
}
