//! Agent-pair persistence in the shared checkpoint container.
//!
//! Arrays are tagged per component: `a.policy.w0`, `b.intent.b2`, one
//! `<agent>.label_embed` table each, plus the frozen codebook and a `meta`
//! array holding the widths the header has no fields for.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AgentConfig, AgentPair};
use crate::diffcore::Mlp;
use crate::vqvae::{Checkpoint, Codebook};
use crate::{AimError, Result};

impl AgentPair {
    fn heads_a(&self) -> Vec<(&'static str, &Mlp)> {
        vec![
            ("a.policy", &self.a.policy),
            ("a.central_value", &self.a.central_value),
            ("a.aim_value", &self.a.aim_value),
            ("a.opp_reward", &self.a.opp_reward),
            ("a.opp_aim", &self.a.opp_aim),
            ("a.intent", &self.a.intent),
        ]
    }

    fn heads_b(&self) -> Vec<(&'static str, &Mlp)> {
        vec![
            ("b.policy", &self.b.policy),
            ("b.aim_value", &self.b.aim_value),
            ("b.opp_reward", &self.b.opp_reward),
            ("b.opp_aim", &self.b.opp_aim),
            ("b.intent", &self.b.intent),
        ]
    }

    /// Array order is fixed so identical parameters give identical bytes.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = vec![(
            "meta".to_string(),
            vec![
                self.cfg.label_classes as f64,
                self.cfg.label_embed_dim as f64,
                self.cfg.hidden as f64,
            ],
        )];
        for (tag, net) in self.heads_a() {
            for (i, pair) in net.params().chunks_exact(2).enumerate() {
                arrays.push((format!("{tag}.w{i}"), self.a.store.get(pair[0]).values.clone()));
                arrays.push((format!("{tag}.b{i}"), self.a.store.get(pair[1]).values.clone()));
            }
        }
        arrays.push((
            "a.label_embed".to_string(),
            self.a.store.get(self.a.label_embed).values.clone(),
        ));
        for (tag, net) in self.heads_b() {
            for (i, pair) in net.params().chunks_exact(2).enumerate() {
                arrays.push((format!("{tag}.w{i}"), self.b.store.get(pair[0]).values.clone()));
                arrays.push((format!("{tag}.b{i}"), self.b.store.get(pair[1]).values.clone()));
            }
        }
        arrays.push((
            "b.label_embed".to_string(),
            self.b.store.get(self.b.label_embed).values.clone(),
        ));
        arrays.push(("codebook".to_string(), self.codebook.vectors.clone()));
        Checkpoint {
            k: self.cfg.k,
            d: self.cfg.d,
            l: self.cfg.l,
            beta: 0.0,
            arrays,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = ckpt.array("meta")?;
        if meta.len() != 3 {
            return Err(AimError::Config(format!(
                "agent checkpoint meta has {} entries, expected 3",
                meta.len()
            )));
        }
        let cfg = AgentConfig {
            k: ckpt.k,
            d: ckpt.d,
            l: ckpt.l,
            label_classes: meta[0] as usize,
            label_embed_dim: meta[1] as usize,
            hidden: meta[2] as usize,
        };
        let vectors = ckpt.array("codebook")?.to_vec();
        if vectors.len() != cfg.k * cfg.d {
            return Err(AimError::Config(format!(
                "codebook array has {} values, expected {}",
                vectors.len(),
                cfg.k * cfg.d
            )));
        }
        let codebook = Codebook {
            k: cfg.k,
            d: cfg.d,
            vectors,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pair = AgentPair::new(cfg, codebook, &mut rng)?;

        let restore = |store: &mut crate::diffcore::ParamStore,
                           id: crate::diffcore::ParamId,
                           name: &str|
         -> Result<()> {
            let values = ckpt.array(name)?;
            let slot = store.get_mut(id);
            if slot.values.len() != values.len() {
                return Err(AimError::Config(format!(
                    "array '{name}' has {} values, expected {}",
                    values.len(),
                    slot.values.len()
                )));
            }
            slot.values.copy_from_slice(values);
            Ok(())
        };
        let a_heads: Vec<(String, Vec<crate::diffcore::ParamId>)> = pair
            .heads_a()
            .into_iter()
            .map(|(tag, net)| (tag.to_string(), net.params()))
            .collect();
        for (tag, params) in a_heads {
            for (i, ids) in params.chunks_exact(2).enumerate() {
                restore(&mut pair.a.store, ids[0], &format!("{tag}.w{i}"))?;
                restore(&mut pair.a.store, ids[1], &format!("{tag}.b{i}"))?;
            }
        }
        let a_embed = pair.a.label_embed;
        restore(&mut pair.a.store, a_embed, "a.label_embed")?;
        let b_heads: Vec<(String, Vec<crate::diffcore::ParamId>)> = pair
            .heads_b()
            .into_iter()
            .map(|(tag, net)| (tag.to_string(), net.params()))
            .collect();
        for (tag, params) in b_heads {
            for (i, ids) in params.chunks_exact(2).enumerate() {
                restore(&mut pair.b.store, ids[0], &format!("{tag}.w{i}"))?;
                restore(&mut pair.b.store, ids[1], &format!("{tag}.b{i}"))?;
            }
        }
        let b_embed = pair.b.label_embed;
        restore(&mut pair.b.store, b_embed, "b.label_embed")?;
        Ok(pair)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
