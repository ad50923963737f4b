//! Corpus storage: `corpus.json` metadata plus one JSONL file per split.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::seed;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.85,
            val: 0.05,
            test: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub categories: Vec<String>,
    pub max_elements: usize,
    /// Layouts dropped during ingestion (too many elements or nothing left).
    pub discarded: usize,
    pub train: Vec<Layout>,
    pub val: Vec<Layout>,
    pub test: Vec<Layout>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    name: String,
    categories: Vec<String>,
    max_elements: usize,
    discarded: usize,
    sizes: BTreeMap<String, usize>,
}

/// Stable identity of a layout's content, independent of element order.
pub fn layout_hash(l: &Layout) -> u64 {
    let mut h = DefaultHasher::new();
    l.canonical().to_json().hash(&mut h);
    h.finish()
}

impl Corpus {
    pub fn num_categories(&self) -> u32 {
        self.categories.len() as u32
    }

    pub fn all(&self) -> impl Iterator<Item = &Layout> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn split(&self, name: &str) -> Result<&[Layout]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }

    /// Validate, apply the element-count filter and split. Identical
    /// layouts always land in the same split.
    pub fn from_layouts(
        name: &str,
        categories: Vec<String>,
        max_elements: usize,
        layouts: Vec<Layout>,
        discarded: usize,
        ratios: SplitRatios,
        split_seed: u64,
    ) -> Result<Corpus> {
        let c = categories.len() as u32;
        let mut discarded = discarded;
        let mut groups: BTreeMap<u64, Vec<Layout>> = BTreeMap::new();
        let mut order = Vec::new();
        for l in layouts {
            match l.validate(c, max_elements) {
                Ok(()) => {}
                Err(Error::TooManyElements { .. }) => {
                    discarded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            let h = layout_hash(&l);
            let g = groups.entry(h).or_default();
            if g.is_empty() {
                order.push(h);
            }
            g.push(l);
        }
        let total: usize = groups.values().map(Vec::len).sum();
        let sum = ratios.train + ratios.val + ratios.test;
        if !(sum > 0.0) || [ratios.train, ratios.val, ratios.test].iter().any(|r| *r < 0.0) {
            return Err(Error::InvalidArgument("split ratios must be >= 0 with a positive sum".into()));
        }
        order.shuffle(&mut seed::rng(split_seed, "split"));
        let want_train = (ratios.train / sum * total as f64).round() as usize;
        let want_val = (ratios.val / sum * total as f64).round() as usize;
        let mut corpus = Corpus {
            name: name.to_string(),
            categories,
            max_elements,
            discarded,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for h in order {
            let g = groups.remove(&h).expect("grouped");
            let dest = if corpus.train.len() < want_train {
                &mut corpus.train
            } else if corpus.val.len() < want_val {
                &mut corpus.val
            } else {
                &mut corpus.test
            };
            dest.extend(g);
        }
        Ok(corpus)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let sizes = SPLITS
            .iter()
            .map(|s| (s.to_string(), self.split(s).expect("known split").len()))
            .collect();
        let meta = Meta {
            name: self.name.clone(),
            categories: self.categories.clone(),
            max_elements: self.max_elements,
            discarded: self.discarded,
            sizes,
        };
        std::fs::write(dir.join("corpus.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        for s in SPLITS {
            write_jsonl(dir.join(format!("{s}.jsonl")), self.split(s)?)?;
        }
        Ok(())
    }

    /// Load a corpus directory written by [`Corpus::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
        let dir = dir.as_ref();
        let meta_path = dir.join("corpus.json");
        let text = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::parse(&meta_path, format!("cannot read corpus metadata: {e}")))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.to_string()))?;
        let mut splits = Vec::new();
        for s in SPLITS {
            let p = dir.join(format!("{s}.jsonl"));
            let layouts = if p.exists() { read_jsonl(&p)? } else { Vec::new() };
            for (i, l) in layouts.iter().enumerate() {
                l.validate(meta.categories.len() as u32, meta.max_elements)
                    .map_err(|e| Error::parse(&p, format!("line {}: {e}", i + 1)))?;
            }
            splits.push(layouts);
        }
        let test = splits.pop().expect("three splits");
        let val = splits.pop().expect("three splits");
        let train = splits.pop().expect("three splits");
        Ok(Corpus {
            name: meta.name,
            categories: meta.categories,
            max_elements: meta.max_elements,
            discarded: meta.discarded,
            train,
            val,
            test,
        })
    }
}

pub fn write_jsonl(path: impl AsRef<Path>, layouts: &[Layout]) -> Result<()> {
    let mut s = String::new();
    for l in layouts {
        s.push_str(&l.to_json());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Layout>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, format!("cannot read: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| Layout::from_json(line).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1))))
        .collect()
}
