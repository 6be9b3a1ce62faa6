//! Autodiff gradients against central finite differences, in f64.

use candle_core::{DType, Device, Tensor, Var};
use dri_iqa::dre::{build_contrastive_batch, dual_contrastive_loss, info_nce, DreConfig, DualRepresentationExtractor, PatchRef};
use dri_iqa::nn::ParamStore;
use dri_iqa::ram::{restoration_loss, rs_loss, PerceptualProxy, PixelReduction};

const H: f64 = 1e-6;

/// `||g - fd|| / max(||g||, ||fd||)` for the gradient of `f` at `x0`.
fn check(x0: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let var = Var::from_tensor(x0).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    let g = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let base = x0.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += H;
        minus[i] -= H;
        let fp = f(&Tensor::from_vec(plus, x0.shape(), x0.device()).unwrap()).to_scalar::<f64>().unwrap();
        let fm = f(&Tensor::from_vec(minus, x0.shape(), x0.device()).unwrap()).to_scalar::<f64>().unwrap();
        fd.push((fp - fm) / (2.0 * H));
    }
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let ng = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nf = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(ng > 1e-8, "gradient vanished");
    diff / ng.max(nf)
}

#[test]
fn info_nce_gradient_wrt_anchor() {
    let dev = Device::Cpu;
    let a = Tensor::randn(0f64, 1.0, 8, &dev).unwrap();
    let p = Tensor::randn(0f64, 1.0, 8, &dev).unwrap();
    let n = Tensor::randn(0f64, 1.0, (5, 8), &dev).unwrap();
    let err = check(&a, |x| info_nce(x, &p, &n, 0.5).unwrap());
    assert!(err < 1e-4, "{err}");
}

#[test]
fn dual_contrastive_gradient() {
    let dev = Device::Cpu;
    let patches: Vec<PatchRef> = (0..3).flat_map(|s| PatchRef::quad(s, 10 + 2 * s as u64, 11 + 2 * s as u64)).collect();
    let batch = build_contrastive_batch(&patches).unwrap();
    let reps = Tensor::randn(0f64, 1.0, (12, 16), &dev).unwrap();
    for tau in [0.07, 0.5] {
        let err = check(&reps, |x| dual_contrastive_loss(&batch, x, tau).unwrap().total);
        assert!(err < 1e-4, "tau {tau}: {err}");
    }
}

#[test]
fn restoration_gradient_on_8x8() {
    let dev = Device::Cpu;
    let proxy = PerceptualProxy::new(DType::F64, &dev).unwrap();
    let reference = Tensor::rand(0f64, 1.0, (1, 3, 8, 8), &dev).unwrap();
    let restored = Tensor::rand(0f64, 1.0, (1, 3, 8, 8), &dev).unwrap();
    for reduction in [PixelReduction::Mean, PixelReduction::Sum] {
        let err = check(&restored, |x| {
            restoration_loss(x, &reference, 0.01, &proxy, reduction).unwrap().total
        });
        assert!(err < 1e-4, "{reduction:?}: {err}");
    }
    // The perceptual branch alone, so it is not hidden behind the pixel term.
    let err = check(&restored, |x| restoration_loss(x, &reference, 1.0, &proxy, PixelReduction::Mean).unwrap().perceptual);
    assert!(err < 1e-4, "perceptual: {err}");
}

#[test]
fn rs_gradient_on_8x8() {
    let dev = Device::Cpu;
    let cfg = DreConfig {
        dim: 16,
        channels: [4, 4, 8, 8],
        min_input: 8,
        groups: 2,
    };
    let store = ParamStore::new(3);
    let frozen = DualRepresentationExtractor::new(&cfg, store.builder(DType::F64, &dev).pp("frozen")).unwrap();
    let reference = Tensor::rand(0f64, 1.0, (2, 3, 8, 8), &dev).unwrap();
    let restored = Tensor::rand(0f64, 1.0, (2, 3, 8, 8), &dev).unwrap();
    let err = check(&restored, |x| rs_loss(x, &reference, &frozen).unwrap());
    assert!(err < 1e-4, "{err}");
}
