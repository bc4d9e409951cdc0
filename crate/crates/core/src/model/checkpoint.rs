use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::*;

/// Sidecar metadata stored next to the parameter container as TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Vocabulary hashes, run index, stage and similar provenance.
    pub provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: ModelConfig,
    provenance: BTreeMap<String, String>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `path` (parameters), `path.meta` (config and provenance) and, when
/// the model carries a lexicon prior, `path.lex` (`source_id target_id prob`).
pub fn save_checkpoint(path: &Path, model: &Model, meta: &CheckpointMeta) -> Result<(), ModelError> {
    model.params.save(path)?;
    let sidecar = Sidecar {
        config: model.config.clone(),
        provenance: meta.provenance.clone(),
    };
    let text = toml::to_string(&sidecar).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let meta_path = with_suffix(path, ".meta");
    std::fs::write(&meta_path, text).map_err(io(&meta_path))?;
    let lex_path = with_suffix(path, ".lex");
    match &model.lexicon {
        Some(prior) => {
            let mut out = String::new();
            for (s, row) in prior.rows().iter().enumerate() {
                for (t, p) in row {
                    let _ = writeln!(out, "{s}\t{t}\t{p:e}");
                }
            }
            std::fs::write(&lex_path, out).map_err(io(&lex_path))?;
        }
        None if lex_path.exists() => std::fs::remove_file(&lex_path).map_err(io(&lex_path))?,
        None => {}
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    let params = ParamSet::load(path)?;
    let meta_path = with_suffix(path, ".meta");
    let text = std::fs::read_to_string(&meta_path).map_err(io(&meta_path))?;
    let sidecar: Sidecar = toml::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", meta_path.display())))?;
    let lex_path = with_suffix(path, ".lex");
    let lexicon = if lex_path.exists() {
        let text = std::fs::read_to_string(&lex_path).map_err(io(&lex_path))?;
        let mut rows = vec![Vec::new(); sidecar.config.source_vocab];
        for (n, line) in text.lines().enumerate() {
            let bad = || ModelError::Checkpoint(format!("{} line {}", lex_path.display(), n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            let [s, t, p] = f.as_slice() else { return Err(bad()) };
            let s: usize = s.parse().map_err(|_| bad())?;
            let t: u32 = t.parse().map_err(|_| bad())?;
            let p: f64 = p.parse().map_err(|_| bad())?;
            if s >= rows.len() || t as usize >= sidecar.config.target_vocab {
                return Err(bad());
            }
            rows[s].push((t, p));
        }
        Some(LexiconPrior::new(rows))
    } else {
        None
    };
    let model = Model::from_parts(sidecar.config, params, lexicon)?;
    Ok((
        model,
        CheckpointMeta {
            provenance: sidecar.provenance,
        },
    ))
}
