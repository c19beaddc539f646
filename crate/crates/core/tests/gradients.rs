//! Analytic gradients against central finite differences in f64.

use linerec::ctc::ctc_loss_grad;
use linerec::model::{backward, forward_branches, Architecture, ImageBatch, ModelParams};
use linerec::train::distill_loss;
use linerec::FrameLogits;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

fn numeric(values: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = values.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + EPS;
            let up = f(&x);
            x[i] = orig - EPS;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

fn random_logits(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> FrameLogits {
    FrameLogits::new(frames, classes, (0..frames * classes).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn ctc_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (frames, classes) = (rng.random_range(3..12), rng.random_range(2..6));
        let logits = random_logits(&mut rng, frames, classes);
        let label: Vec<u32> = (0..rng.random_range(1..=frames / 2)).map(|_| rng.random_range(1..classes as u32)).collect();
        let analytic = ctc_loss_grad(&logits, &label).unwrap().grad;
        let num = numeric(logits.values(), |v| {
            ctc_loss_grad(&FrameLogits::new(frames, classes, v.to_vec()).unwrap(), &label).unwrap().loss
        });
        let e = rel_error(&analytic, &num);
        assert!(e < 1e-4, "relative error {e}");
    }
}

#[test]
fn distillation_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (frames, classes) = (rng.random_range(1..8), rng.random_range(2..7));
        let student = random_logits(&mut rng, frames, classes);
        let teacher = random_logits(&mut rng, frames, classes);
        let tau = rng.random_range(0.5..4.0);
        let out = distill_loss(&student, &teacher, tau).unwrap();
        assert!(out.teacher_grad.iter().all(|g| *g == 0.0));
        let num = numeric(student.values(), |v| {
            distill_loss(&FrameLogits::new(frames, classes, v.to_vec()).unwrap(), &teacher, tau).unwrap().value
        });
        let e = rel_error(&out.student_grad, &num);
        assert!(e < 1e-4, "relative error {e}");
    }
}

/// Combined objective with teacher soft targets frozen at `targets`.
fn objective(params: &ModelParams<f64>, batch: &ImageBatch<f64>, labels: &[Vec<u32>], targets: &[FrameLogits]) -> f64 {
    let tr = forward_branches(params, batch, true).unwrap();
    labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let s = tr.student_frame_logits(i);
            let t = tr.teacher_frame_logits(i).unwrap();
            ctc_loss_grad(&s, label).unwrap().loss
                + 0.5 * distill_loss(&s, &targets[i], 2.0).unwrap().value
                + 0.7 * ctc_loss_grad(&t, label).unwrap().loss
        })
        .sum()
}

#[test]
fn end_to_end_tiny_model() {
    let arch = Architecture { channels: [2, 3, 4], hidden: 3, classes: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    for inst in 0..50 {
        let params = ModelParams::<f64>::init(arch, inst);
        let (n, h, w) = (2, 4, 12);
        let data = (0..n * 3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = ImageBatch::new(n, h, w, data).unwrap();
        let labels: Vec<Vec<u32>> = (0..n).map(|_| vec![rng.random_range(1..4), rng.random_range(1..4)]).collect();
        let labels: Vec<Vec<u32>> = labels.into_iter().map(|l| if l[0] == l[1] { vec![l[0]] } else { l }).collect();

        let tr = forward_branches(&params, &batch, true).unwrap();
        let targets: Vec<FrameLogits> = (0..n).map(|i| tr.teacher_frame_logits(i).unwrap()).collect();
        let per = tr.frames * tr.classes;
        let mut ds = vec![0.0; n * per];
        let mut dt = vec![0.0; n * per];
        for (i, label) in labels.iter().enumerate() {
            let s = tr.student_frame_logits(i);
            let c = ctc_loss_grad(&s, label).unwrap().grad;
            let k = distill_loss(&s, &targets[i], 2.0).unwrap().student_grad;
            let t = ctc_loss_grad(&targets[i], label).unwrap().grad;
            for j in 0..per {
                ds[i * per + j] = c[j] + 0.5 * k[j];
                dt[i * per + j] = 0.7 * t[j];
            }
        }
        let grads = backward(&params, &tr, &ds, Some(&dt)).unwrap();
        let num = numeric(params.values(), |v| {
            let p = ModelParams::from_values(arch, v.to_vec()).unwrap();
            objective(&p, &batch, &labels, &targets)
        });
        let e = rel_error(grads.values(), &num);
        worst = worst.max(e);
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}
