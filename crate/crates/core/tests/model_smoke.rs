use std::time::Instant;

use uniedit_core::codec::{Media, MediaKind};
use uniedit_core::model::{EditItem, EditModel, ModelConfig};
use uniedit_core::rng::derive_rng;

fn colored(kind: MediaKind, frames: usize, rgb: [f32; 3]) -> Media {
    Media::uniform(kind, frames, 32, 32, rgb)
}

#[test]
fn fm_loss_runs_and_is_deterministic() {
    let model = EditModel::new(ModelConfig::default(), 7).unwrap();
    let trainable = model.params.names_with_prefixes(&["query", "lora", "mlp"]);
    let src = colored(MediaKind::Image, 1, [0.2, 0.2, 0.8]);
    let tgt = colored(MediaKind::Image, 1, [0.8, 0.2, 0.2]);
    let items: Vec<EditItem> = (0..4)
        .map(|_| EditItem {
            instruction: "recolor the blue square to red",
            source: &src,
            target: &tgt,
            reference: None,
        })
        .collect();

    let t0 = Instant::now();
    let mut rng = derive_rng(1, "loss");
    let (loss1, grads1) = model.fm_loss_batch(&trainable, &items, &mut rng).unwrap();
    let per_sample = t0.elapsed().as_secs_f64() / items.len() as f64;
    eprintln!("image fm_loss: {loss1:.4}, {:.1} ms/sample", per_sample * 1e3);
    assert!(loss1.is_finite() && loss1 > 0.0);
    assert!(!grads1.is_empty());

    let mut rng = derive_rng(1, "loss");
    let (loss2, grads2) = model.fm_loss_batch(&trainable, &items, &mut rng).unwrap();
    assert_eq!(loss1.to_bits(), loss2.to_bits(), "loss must be bitwise deterministic");
    for (name, g1) in &grads1 {
        assert!(g1.bit_eq(&grads2[name]), "grad {name} differs");
    }

    // Video batch timing.
    let vsrc = colored(MediaKind::Video, 5, [0.1, 0.7, 0.1]);
    let vtgt = colored(MediaKind::Video, 5, [0.7, 0.1, 0.1]);
    let vitems: Vec<EditItem> = (0..2)
        .map(|_| EditItem {
            instruction: "recolor the green square to red",
            source: &vsrc,
            target: &vtgt,
            reference: None,
        })
        .collect();
    let t0 = Instant::now();
    let mut rng = derive_rng(2, "loss");
    let (vloss, _) = model.fm_loss_batch(&trainable, &vitems, &mut rng).unwrap();
    eprintln!("video fm_loss: {vloss:.4}, {:.1} ms/sample", t0.elapsed().as_secs_f64() / 2.0 * 1e3);

    // Sampler smoke + determinism.
    let t0 = Instant::now();
    let out1 = model.sample_edit("recolor the blue square to red", &src, None, 8, 5, 1.0).unwrap();
    eprintln!("sample 8 steps: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3);
    let out2 = model.sample_edit("recolor the blue square to red", &src, None, 8, 5, 1.0).unwrap();
    assert!(out1.bit_eq(&out2), "sampling must be bitwise deterministic");
}
