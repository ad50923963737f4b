//! Ingestion of external dataset formats into [`Corpus`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::corpus::{Corpus, SplitRatios};
use crate::error::{Error, Result};
use crate::layout::{BBox, Element, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// A directory written by [`Corpus::save`].
    Native,
    /// COCO-style detection JSON (PubLayNet).
    PubLayNet,
    /// View-hierarchy semantic annotations, one JSON per screen (Rico).
    Rico,
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(Schema::Native),
            "publaynet" | "coco" => Ok(Schema::PubLayNet),
            "rico" => Ok(Schema::Rico),
            other => Err(Error::InvalidArgument(format!("unknown schema {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub max_elements: usize,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_elements: crate::layout::DEFAULT_MAX_ELEMENTS,
            ratios: SplitRatios::default(),
            seed: 0,
        }
    }
}

const RICO_CATEGORIES: &str = include_str!("../../data/rico25.json");

#[derive(Deserialize)]
struct CategoryList {
    categories: Vec<String>,
}

/// The 25 Rico component classes, in category-id order.
pub fn rico_categories() -> Vec<String> {
    serde_json::from_str::<CategoryList>(RICO_CATEGORIES)
        .expect("bundled category list")
        .categories
}

pub fn load_corpus(path: impl AsRef<Path>, schema: Schema, opts: &LoadOptions) -> Result<Corpus> {
    let path = path.as_ref();
    match schema {
        Schema::Native => Corpus::load(path),
        Schema::PubLayNet => load_coco(path, opts),
        Schema::Rico => load_rico(path, opts),
    }
}

fn json_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::parse(path, format!("cannot list: {e}")))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::parse(path, "no JSON files found"));
    }
    Ok(files)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, format!("cannot read: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Normalize a pixel-space `[left, top, right, bottom]` box; `None` when it
/// is degenerate after clipping to the canvas.
fn normalize(ltrb: [f64; 4], width: f64, height: f64) -> Option<BBox> {
    let l = (ltrb[0] / width).clamp(0.0, 1.0);
    let t = (ltrb[1] / height).clamp(0.0, 1.0);
    let r = (ltrb[2] / width).clamp(0.0, 1.0);
    let b = (ltrb[3] / height).clamp(0.0, 1.0);
    (r > l && b > t).then(|| BBox::from_ltrb(l, t, r, b))
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Deserialize)]
struct Coco {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

fn load_coco(path: &Path, opts: &LoadOptions) -> Result<Corpus> {
    let mut names: Option<Vec<(u64, String)>> = None;
    let mut layouts = Vec::new();
    let mut discarded = 0;
    for file in json_files(path)? {
        let coco: Coco = read_json(&file)?;
        let mut cats: Vec<(u64, String)> = coco.categories.into_iter().map(|c| (c.id, c.name)).collect();
        cats.sort();
        match &names {
            None => names = Some(cats.clone()),
            Some(n) if *n != cats => {
                return Err(Error::parse(&file, "category list differs from earlier files"));
            }
            _ => {}
        }
        let id_of: BTreeMap<u64, u32> = cats.iter().enumerate().map(|(i, (id, _))| (*id, i as u32 + 1)).collect();
        let mut per_image: BTreeMap<u64, Vec<Element>> = BTreeMap::new();
        let sizes: BTreeMap<u64, (f64, f64)> = coco.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
        for a in &coco.annotations {
            let category = *id_of
                .get(&a.category_id)
                .ok_or_else(|| Error::UnknownCategory(a.category_id.to_string()))?;
            let &(w, h) = sizes
                .get(&a.image_id)
                .ok_or_else(|| Error::parse(&file, format!("annotation for unknown image {}", a.image_id)))?;
            let [x, y, bw, bh] = a.bbox;
            if let Some(b) = normalize([x, y, x + bw, y + bh], w, h) {
                per_image.entry(a.image_id).or_default().push(Element::new(category, b));
            }
        }
        for img in &coco.images {
            match per_image.remove(&img.id) {
                Some(els) => layouts.push(Layout::new(els).with_canvas((img.width as u32, img.height as u32))),
                None => discarded += 1,
            }
        }
    }
    let names = names.unwrap_or_default().into_iter().map(|(_, n)| n).collect();
    Corpus::from_layouts("publaynet", names, opts.max_elements, layouts, discarded, opts.ratios, opts.seed)
}

#[derive(Deserialize)]
struct RicoNode {
    bounds: Option<[f64; 4]>,
    #[serde(rename = "componentLabel")]
    component_label: Option<String>,
    #[serde(default)]
    children: Vec<RicoNode>,
}

fn collect_rico(node: &RicoNode, ids: &BTreeMap<&str, u32>, w: f64, h: f64, out: &mut Vec<Element>) -> Result<()> {
    if let (Some(label), Some(bounds)) = (&node.component_label, node.bounds) {
        let category = *ids
            .get(label.as_str())
            .ok_or_else(|| Error::UnknownCategory(label.clone()))?;
        if let Some(b) = normalize(bounds, w, h) {
            out.push(Element::new(category, b));
        }
    }
    for c in &node.children {
        collect_rico(c, ids, w, h, out)?;
    }
    Ok(())
}

fn load_rico(path: &Path, opts: &LoadOptions) -> Result<Corpus> {
    let names = rico_categories();
    let ids: BTreeMap<&str, u32> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i as u32 + 1)).collect();
    let mut layouts = Vec::new();
    let mut discarded = 0;
    for file in json_files(path)? {
        let root: RicoNode = read_json(&file)?;
        let [l, t, r, b] = root
            .bounds
            .ok_or_else(|| Error::parse(&file, "root node has no bounds"))?;
        let (w, h) = (r - l, b - t);
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::parse(&file, "root bounds are empty"));
        }
        let mut els = Vec::new();
        collect_rico(&root, &ids, w, h, &mut els)?;
        if els.is_empty() {
            discarded += 1;
        } else {
            layouts.push(Layout::new(els).with_canvas((w as u32, h as u32)));
        }
    }
    Corpus::from_layouts("rico", names, opts.max_elements, layouts, discarded, opts.ratios, opts.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_rico_mapping_has_25_classes() {
        assert_eq!(rico_categories().len(), 25);
    }

    #[test]
    fn coco_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let mut anns = vec![
            r#"{"image_id":1,"category_id":3,"bbox":[10,20,30,40]}"#.to_string(),
            r#"{"image_id":2,"category_id":1,"bbox":[0,0,100,50]}"#.to_string(),
            r#"{"image_id":2,"category_id":5,"bbox":[0,50,100,50]}"#.to_string(),
        ];
        for i in 0..30 {
            anns.push(format!(r#"{{"image_id":3,"category_id":1,"bbox":[{i},0,1,1]}}"#));
        }
        let doc = format!(
            r#"{{"images":[{{"id":1,"width":100,"height":200}},{{"id":2,"width":100,"height":100}},{{"id":3,"width":100,"height":100}}],
            "annotations":[{}],
            "categories":[{{"id":1,"name":"text"}},{{"id":2,"name":"title"}},{{"id":3,"name":"list"}},{{"id":4,"name":"table"}},{{"id":5,"name":"figure"}}]}}"#,
            anns.join(",")
        );
        std::fs::write(dir.path().join("train.json"), doc).unwrap();
        let c = load_corpus(dir.path(), Schema::PubLayNet, &LoadOptions::default()).unwrap();
        assert_eq!(c.discarded, 1);
        assert_eq!(c.all().count(), 2);
        assert_eq!(c.all().map(Layout::len).sum::<usize>(), 3);
        let one = c.all().find(|l| l.len() == 1).unwrap();
        let b = one.elements[0].bbox;
        assert_eq!(one.elements[0].category, 3);
        assert!((b.cx - 0.25).abs() < 1e-12 && (b.cy - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rico_ingestion_and_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        let screen = r#"{"bounds":[0,0,1440,2560],"children":[
            {"bounds":[0,0,1440,256],"componentLabel":"Toolbar","children":[
                {"bounds":[0,0,144,256],"componentLabel":"Icon"}]},
            {"bounds":[0,256,1440,2560],"componentLabel":"List Item"}]}"#;
        std::fs::write(dir.path().join("1.json"), screen).unwrap();
        let c = load_corpus(dir.path(), Schema::Rico, &LoadOptions::default()).unwrap();
        let l = c.all().next().unwrap();
        assert_eq!(l.len(), 3);
        std::fs::write(dir.path().join("2.json"), r#"{"bounds":[0,0,10,10],"children":[{"bounds":[0,0,5,5],"componentLabel":"Spinner"}]}"#)
            .unwrap();
        assert!(matches!(
            load_corpus(dir.path(), Schema::Rico, &LoadOptions::default()),
            Err(Error::UnknownCategory(_))
        ));
    }

    #[test]
    fn empty_directory_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        for schema in [Schema::Native, Schema::PubLayNet, Schema::Rico] {
            assert!(matches!(
                load_corpus(dir.path(), schema, &LoadOptions::default()),
                Err(Error::Parse { .. })
            ));
        }
    }
}
