//! Whole-model assembly: parameter initialization under the store naming
//! convention, the encoder -> fusion -> bridge -> decoder forward pass,
//! and self-describing weights files (architecture scalars ride along as
//! `cfg.*` entries so a weights file alone reconstructs the model).

use std::collections::BTreeMap;
use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::config::{FusionMode, ModelConfig};
use crate::decoder;
use crate::encoder::{self, sinusoid_table};
use crate::error::{CoreError, Result};
use crate::fusion;
use crate::tensor::{load_entries, save_entries, ParamStore, Tape, TapeParams, Tensor, Var};
use crate::vocab::{CoordVocab, Token};

pub struct TrackModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
}

fn frozen_name(name: &str) -> bool {
    name.starts_with("enc.pos_")
}

/// Zero-mean / unit-variance copy of a crop (flat crops pass through
/// mean-centered).
pub fn standardize(img: &Tensor) -> Tensor {
    let data = img.data();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    Tensor::from_fn(img.shape(), |i| (data[i] - mean) * inv)
}

impl TrackModel {
    /// Fresh random parameters for the given architecture.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let std = cfg.init_std;
        let c = cfg.embed_dim;
        let d = cfg.dec_hidden;

        // Residual transformer blocks take the small ViT-style init; the
        // un-normalized feed-through paths (patch embedding, fusion convs,
        // bridge, head) get fan-in scaling or they attenuate activations
        // to nothing.
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let mut init = |store: &mut ParamStore, name: String, shape: &[usize], s: f64| {
            store.insert(name, Tensor::randn(shape, s, &mut rng));
        };
        let zeros = |store: &mut ParamStore, name: String, shape: &[usize]| {
            store.insert(name, Tensor::zeros(shape));
        };
        let ones = |store: &mut ParamStore, name: String, shape: &[usize]| {
            store.insert(name, Tensor::filled(shape, 1.0));
        };

        init(
            &mut store,
            "enc.patch_embed.w".into(),
            &[c, 1, cfg.patch, cfg.patch],
            he(cfg.patch * cfg.patch),
        );
        zeros(&mut store, "enc.patch_embed.b".into(), &[c]);
        store.insert_frozen("enc.pos_z", sinusoid_table(cfg.template_tokens(), c));
        store.insert_frozen("enc.pos_x", sinusoid_table(cfg.search_tokens(), c));

        for i in 0..cfg.enc_layers {
            let n = |s: &str| format!("enc.layer{i}.{s}");
            ones(&mut store, n("norm1.g"), &[c]);
            zeros(&mut store, n("norm1.b"), &[c]);
            init(&mut store, n("qkv.w"), &[c, 3 * c], std);
            zeros(&mut store, n("qkv.b"), &[3 * c]);
            init(&mut store, n("proj.w"), &[c, c], std);
            zeros(&mut store, n("proj.b"), &[c]);
            ones(&mut store, n("norm2.g"), &[c]);
            zeros(&mut store, n("norm2.b"), &[c]);
            init(&mut store, n("mlp1.w"), &[c, cfg.mlp_ratio * c], std);
            zeros(&mut store, n("mlp1.b"), &[cfg.mlp_ratio * c]);
            init(&mut store, n("mlp2.w"), &[cfg.mlp_ratio * c, c], std);
            zeros(&mut store, n("mlp2.b"), &[c]);
        }

        // Pyramid expansion exists for every fusion mode. The stride-2,
        // kernel-2 transposed conv feeds each output from one tap per
        // input channel.
        init(&mut store, "fus.expand.w".into(), &[c, c, 2, 2], he(c));
        zeros(&mut store, "fus.expand.b".into(), &[c]);
        match cfg.fusion {
            FusionMode::Mpfm => {
                for block in ["fus.up1", "fus.up2", "fus.down1"] {
                    init(&mut store, format!("{block}.w1"), &[c, 2 * c, 1, 1], he(2 * c));
                    zeros(&mut store, format!("{block}.b1"), &[c]);
                    init(&mut store, format!("{block}.w2"), &[c, c, 3, 3], he(9 * c));
                    zeros(&mut store, format!("{block}.b2"), &[c]);
                    init(&mut store, format!("{block}.w3"), &[c, c, 1, 1], he(c));
                    zeros(&mut store, format!("{block}.b3"), &[c]);
                }
            }
            FusionMode::Conf => {
                init(&mut store, "fus.conf.w".into(), &[c, 3 * c, 1, 1], he(3 * c));
                zeros(&mut store, "fus.conf.b".into(), &[c]);
            }
            FusionMode::Addf => {
                for i in 0..3 {
                    init(&mut store, format!("fus.addf{i}.w"), &[c, c, 1, 1], he(c));
                    zeros(&mut store, format!("fus.addf{i}.b"), &[c]);
                }
            }
        }

        init(&mut store, "dec.bridge.w".into(), &[c, d], he(c));
        zeros(&mut store, "dec.bridge.b".into(), &[d]);
        let vocab = CoordVocab::new(cfg.nbins)?;
        init(&mut store, "dec.embed".into(), &[vocab.embed_rows(), d], std);

        for i in 0..cfg.dec_layers {
            let n = |s: &str| format!("dec.layer{i}.{s}");
            ones(&mut store, n("norm1.g"), &[d]);
            zeros(&mut store, n("norm1.b"), &[d]);
            init(&mut store, n("qkv.w"), &[d, 3 * d], std);
            zeros(&mut store, n("qkv.b"), &[3 * d]);
            init(&mut store, n("proj.w"), &[d, d], std);
            zeros(&mut store, n("proj.b"), &[d]);
            ones(&mut store, n("norm2.g"), &[d]);
            zeros(&mut store, n("norm2.b"), &[d]);
            init(&mut store, n("cross_q.w"), &[d, d], std);
            zeros(&mut store, n("cross_q.b"), &[d]);
            init(&mut store, n("cross_kv.w"), &[d, 2 * d], std);
            zeros(&mut store, n("cross_kv.b"), &[2 * d]);
            init(&mut store, n("cross_proj.w"), &[d, d], std);
            zeros(&mut store, n("cross_proj.b"), &[d]);
            ones(&mut store, n("norm3.g"), &[d]);
            zeros(&mut store, n("norm3.b"), &[d]);
            init(&mut store, n("mlp1.w"), &[d, cfg.mlp_ratio * d], std);
            zeros(&mut store, n("mlp1.b"), &[cfg.mlp_ratio * d]);
            init(&mut store, n("mlp2.w"), &[cfg.mlp_ratio * d, d], std);
            zeros(&mut store, n("mlp2.b"), &[d]);
        }

        init(&mut store, "dec.head.1.w".into(), &[d, d], he(d));
        zeros(&mut store, "dec.head.1.b".into(), &[d]);
        init(&mut store, "dec.head.2.w".into(), &[d, d], he(d));
        zeros(&mut store, "dec.head.2.b".into(), &[d]);
        init(&mut store, "dec.head.3.w".into(), &[d, vocab.head_dim()], he(d));
        zeros(&mut store, "dec.head.3.b".into(), &[vocab.head_dim()]);

        Ok(Self { cfg, store })
    }

    pub fn vocab(&self) -> CoordVocab {
        CoordVocab::new(self.cfg.nbins).expect("validated nbins")
    }

    /// Switch the fusion path; fails if the store lacks that path's
    /// parameters.
    pub fn with_fusion(mut self, fusion: FusionMode) -> Result<Self> {
        self.cfg.fusion = fusion;
        self.check_completeness()?;
        Ok(self)
    }

    /// Encoder -> fusion -> bridge. Returns `[search_tokens, dec_hidden]`.
    ///
    /// Crops are standardized to zero mean / unit variance before the
    /// patch embedding; raw intensities have far too little contrast to
    /// compete with the positional tables.
    pub fn forward_features(
        &self,
        t: &mut Tape,
        p: &TapeParams,
        fixed_template: &Tensor,
        dynamic_template: &Tensor,
        search: &Tensor,
    ) -> Result<Var> {
        let fz = t.leaf(&standardize(fixed_template));
        let dz = t.leaf(&standardize(dynamic_template));
        let sx = t.leaf(&standardize(search));
        let f_x = encoder::encode(t, p, &self.cfg, fz, dz, sx)?;

        // [N, C] -> [C, g, g] for the spatial fusion stage.
        let g = self.cfg.search_grid();
        let c = self.cfg.embed_dim;
        let cn = t.transpose2(f_x)?;
        let chw = t.reshape(cn, &[c, g, g])?;
        let fused = match self.cfg.fusion {
            FusionMode::Mpfm => fusion::mpfm(t, chw, p)?,
            FusionMode::Conf => {
                let pyr = self.pyramid(t, p, chw)?;
                fusion::conf_fusion(t, &pyr, p)?
            }
            FusionMode::Addf => {
                let pyr = self.pyramid(t, p, chw)?;
                fusion::addf_fusion(t, &pyr, p)?
            }
        };
        let flat = t.reshape(fused, &[c, g * g])?;
        let nc = t.transpose2(flat)?;
        t.linear(nc, p.var("dec.bridge.w")?, p.var("dec.bridge.b")?)
    }

    fn pyramid(&self, t: &mut Tape, p: &TapeParams, chw: Var) -> Result<Vec<Var>> {
        let ew = p.var("fus.expand.w")?;
        let eb = p.var("fus.expand.b")?;
        let pyr = fusion::build_pyramid(t, chw, ew, eb)?;
        pyr.validate(t)?;
        Ok(pyr.levels)
    }

    /// Teacher-forced logits `[5, nbins + 1]` for one sample.
    pub fn teacher_logits(
        &self,
        t: &mut Tape,
        p: &TapeParams,
        feats: Var,
        input: &[Token; 5],
    ) -> Result<Var> {
        decoder::teacher_forcing_logits(t, p, &self.cfg, &self.vocab(), feats, input)
    }

    /// Greedy inference on crops already sized per the config.
    pub fn predict(
        &self,
        fixed_template: &Tensor,
        dynamic_template: &Tensor,
        search: &Tensor,
    ) -> Result<([Token; 4], [f64; 4])> {
        let mut t = Tape::new();
        let p = t.register(&self.store);
        let feats = self.forward_features(&mut t, &p, fixed_template, dynamic_template, search)?;
        decoder::greedy_decode(&mut t, &p, &self.cfg, &self.vocab(), feats)
    }

    // ── Weights files ───────────────────────────────────────────────

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: BTreeMap<String, Tensor> = BTreeMap::new();
        for (k, v) in config_scalars(&self.cfg) {
            entries.insert(k, Tensor::scalar(v));
        }
        for (name, param) in self.store.iter() {
            entries.insert(name.to_string(), param.value.clone());
        }
        save_entries(path, entries.iter().map(|(k, v)| (k.as_str(), v)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let what = || format!("weights file {}", path.display());
        let mut scalars: BTreeMap<String, f64> = BTreeMap::new();
        let mut store = ParamStore::new();
        for (name, tensor) in load_entries(path)? {
            if let Some(key) = name.strip_prefix("cfg.") {
                if tensor.numel() != 1 {
                    return Err(CoreError::malformed(what(), format!("cfg entry {name} is not scalar")));
                }
                scalars.insert(key.to_string(), tensor.data()[0]);
            } else if frozen_name(&name) {
                store.insert_frozen(name, tensor);
            } else {
                store.insert(name, tensor);
            }
        }
        let cfg = config_from_scalars(&scalars, &what())?;
        cfg.validate()?;
        let model = Self { cfg, store };
        model.check_completeness()?;
        Ok(model)
    }

    /// Every parameter the architecture needs must be present with the
    /// right shape; a reference init provides the expected inventory.
    fn check_completeness(&self) -> Result<()> {
        let reference = TrackModel::init(self.cfg.clone(), 0)?;
        for (name, param) in reference.store.iter() {
            let got = self.store.value(name)?;
            if got.shape() != param.value.shape() {
                return Err(CoreError::contract(
                    "TrackModel::load",
                    format!(
                        "parameter {name} has shape {:?}, architecture wants {:?}",
                        got.shape(),
                        param.value.shape()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// End-to-end gradient check: encoder -> fusion -> decoder -> combined
/// loss on one random sample, probed against central differences.
pub fn pipeline_grad_check(
    cfg: &ModelConfig,
    seed: u64,
    gc: &crate::tensor::GradCheckConfig,
) -> Result<crate::tensor::GradCheckReport> {
    use rand::Rng;
    let model = TrackModel::init(cfg.clone(), seed)?;
    let vocab = model.vocab();
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e3779b9);
    let fixed = Tensor::from_fn(&[1, cfg.template_size, cfg.template_size], |_| rng.gen_range(0.0..1.0));
    let dynamic = Tensor::from_fn(&[1, cfg.template_size, cfg.template_size], |_| rng.gen_range(0.0..1.0));
    let search = Tensor::from_fn(&[1, cfg.search_size, cfg.search_size], |_| rng.gen_range(0.0..1.0));
    let gt = crate::bbox::BBox::normalized(0.31, 0.42, 0.22, 0.18)?;
    let enc = vocab.encode_box(&gt)?;

    // Clone the store out first: the closure rebuilds the forward pass on
    // every probe against whatever parameter values the checker supplies.
    let store = model.store.clone();
    crate::tensor::grad_check(
        &store,
        move |t, p| {
            let feats = model.forward_features(t, p, &fixed, &dynamic, &search)?;
            let logits = model.teacher_logits(t, p, feats, &enc.input)?;
            let report = crate::loss::total_loss(t, logits, &enc.target, &gt, &vocab)?;
            Ok(report.total_var)
        },
        gc,
    )
}

fn config_scalars(cfg: &ModelConfig) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut kv = |k: &str, v: f64| out.push((format!("cfg.{k}"), v));
    kv("nbins", cfg.nbins as f64);
    kv("template_size", cfg.template_size as f64);
    kv("search_size", cfg.search_size as f64);
    kv("patch", cfg.patch as f64);
    kv("enc_layers", cfg.enc_layers as f64);
    kv("embed_dim", cfg.embed_dim as f64);
    kv("enc_heads", cfg.enc_heads as f64);
    kv("mlp_ratio", cfg.mlp_ratio as f64);
    kv("dec_layers", cfg.dec_layers as f64);
    kv("dec_hidden", cfg.dec_hidden as f64);
    kv("dec_heads", cfg.dec_heads as f64);
    kv("fusion", cfg.fusion.code() as f64);
    kv("lambda", cfg.lambda);
    kv("zu", cfg.zu as f64);
    kv("template_side_factor", cfg.template_side_factor);
    kv("search_side_factor", cfg.search_side_factor);
    kv("lr_encoder", cfg.lr_encoder);
    kv("lr_other", cfg.lr_other);
    kv("weight_decay", cfg.weight_decay);
    kv("epochs", cfg.epochs as f64);
    kv("samples_per_epoch", cfg.samples_per_epoch as f64);
    kv("batch_size", cfg.batch_size as f64);
    kv("init_std", cfg.init_std);
    kv("seed_hi", (cfg.seed >> 32) as f64);
    kv("seed_lo", (cfg.seed & 0xffff_ffff) as f64);
    out
}

fn config_from_scalars(s: &BTreeMap<String, f64>, what: &str) -> Result<ModelConfig> {
    let get = |k: &str| -> Result<f64> {
        s.get(k)
            .copied()
            .ok_or_else(|| CoreError::malformed(what, format!("missing cfg.{k}")))
    };
    let int = |k: &str| -> Result<usize> { Ok(get(k)? as usize) };
    Ok(ModelConfig {
        nbins: get("nbins")? as u32,
        template_size: int("template_size")?,
        search_size: int("search_size")?,
        patch: int("patch")?,
        enc_layers: int("enc_layers")?,
        embed_dim: int("embed_dim")?,
        enc_heads: int("enc_heads")?,
        mlp_ratio: int("mlp_ratio")?,
        dec_layers: int("dec_layers")?,
        dec_hidden: int("dec_hidden")?,
        dec_heads: int("dec_heads")?,
        fusion: FusionMode::from_code(get("fusion")? as u32)?,
        lambda: get("lambda")?,
        zu: get("zu")? as u32,
        template_side_factor: get("template_side_factor")?,
        search_side_factor: get("search_side_factor")?,
        lr_encoder: get("lr_encoder")?,
        lr_other: get("lr_other")?,
        weight_decay: get("weight_decay")?,
        epochs: int("epochs")?,
        samples_per_epoch: int("samples_per_epoch")?,
        batch_size: int("batch_size")?,
        init_std: get("init_std")?,
        seed: ((get("seed_hi")? as u64) << 32) | (get("seed_lo")? as u64),
    })
}
