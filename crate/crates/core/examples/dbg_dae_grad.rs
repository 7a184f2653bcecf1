use tograsp_core::dae::*;
use tograsp_core::nnet::Grads;
use tograsp_core::synth::{build_dataset, DatasetConfig};

fn main() {
    let cfg = DaeConfig {
        n_patch: 10, k_neighbors: 6, model_dim: 16, latent_dim: 6,
        n_encoder: 1, n_decoder: 1, heads: 2, ff_mult: 2,
        tokenizer_hidden: 8, n_restore: 24, decode_hidden: 12,
        pos_freq: 2, mask_ratio: 0.5, init_seed: 3,
    };
    let ds_cfg = DatasetConfig { gt_density: 320, ..DatasetConfig::default() };
    let ds = build_dataset(4, 4, 99, &ds_cfg).unwrap();
    let mut model = DaeModel::new(cfg).unwrap();
    let prepared = prepare_samples(&model, &ds).unwrap();
    let pos_i = prepared.iter().position(|s| s.plausible).unwrap();
    let neg_i = prepared.iter().position(|s| !s.plausible).unwrap();

    let eval = |model: &DaeModel, grads: Option<&mut Grads>| -> LossTerms {
        let p = [BatchItem { sample: &prepared[pos_i], mask_seed: 5 }];
        let n = [BatchItem { sample: &prepared[neg_i], mask_seed: 6 }];
        loss_terms(model, &p, &n, grads).unwrap()
    };
    let mut grads = Grads::zeros_like(&model.params);
    let _ = eval(&model, Some(&mut grads));
    let id = model.params.id_of("tok.mlp1.b").unwrap();
    let i = 7;
    let h = 1e-5;
    let orig = model.params.value(id).data[i];
    model.params.value_mut(id).data[i] = orig + h;
    let tp = eval(&model, None);
    model.params.value_mut(id).data[i] = orig - h;
    let tm = eval(&model, None);
    model.params.value_mut(id).data[i] = orig;
    let fd = |a: f64, b: f64| (a - b) / (2.0 * h);
    println!("pos_kl  fd {:.6e}", fd(tp.l_pos_kl, tm.l_pos_kl));
    println!("neg_kl  fd {:.6e}", fd(tp.l_neg_kl, tm.l_neg_kl));
    println!("restore fd {:.6e}", fd(tp.l_restore, tm.l_restore));
    println!("mask    fd {:.6e}", fd(tp.l_mask, tm.l_mask));
    println!("total   fd {:.6e}  analytic {:.6e}", fd(tp.total, tm.total), grads.get(id).data[i]);
}
