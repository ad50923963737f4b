//! Fixed-length token sequences.
//!
//! Element `i` occupies positions `5i..5i+5` as `(c, x, y, w, h)`; slots
//! beyond the layout's element count hold PAD.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{BBox, Element, Layout};
use crate::quantizer::{Modality, Vocabulary};

pub const ATTRIBUTES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn filled(max_elements: usize, token: u32) -> Self {
        TokenSeq(vec![token; ATTRIBUTES * max_elements])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_elements(&self) -> usize {
        self.0.len() / ATTRIBUTES
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn slot(&self, i: usize) -> &[u32] {
        &self.0[ATTRIBUTES * i..ATTRIBUTES * (i + 1)]
    }

    /// Check that every token lies in its position's modality range or is PAD/MASK.
    pub fn check_modalities(&self, vocab: &Vocabulary) -> Result<()> {
        for (p, &tok) in self.0.iter().enumerate() {
            let m = Modality::of_position(p);
            if vocab.to_local(m, tok).is_none() {
                return Err(Error::ModalityMismatch {
                    position: p,
                    token: tok,
                    modality: m.name(),
                });
            }
        }
        Ok(())
    }
}

/// Decompose a position into (element index, attribute index).
pub fn position_indices(p: usize) -> (usize, usize) {
    (p / ATTRIBUTES, p % ATTRIBUTES)
}

fn encode_element(e: &Element, vocab: &Vocabulary) -> Result<[u32; 5]> {
    let b = &e.bbox;
    Ok([
        vocab.category_token(e.category),
        vocab.encode(b.cx, Modality::X)?,
        vocab.encode(b.cy, Modality::Y)?,
        vocab.encode(b.w, Modality::W)?,
        vocab.encode(b.h, Modality::H)?,
    ])
}

/// Quantize and flatten in the layout's own element order.
pub fn flatten(layout: &Layout, vocab: &Vocabulary, max_elements: usize) -> Result<TokenSeq> {
    layout.validate(vocab.num_categories(), max_elements)?;
    let mut seq = TokenSeq::filled(max_elements, vocab.pad());
    for (i, e) in layout.elements.iter().enumerate() {
        let toks = encode_element(e, vocab)?;
        seq.0[ATTRIBUTES * i..ATTRIBUTES * (i + 1)].copy_from_slice(&toks);
    }
    Ok(seq)
}

/// Flatten after a uniformly random permutation of the elements.
pub fn flatten_shuffled(
    layout: &Layout,
    vocab: &Vocabulary,
    max_elements: usize,
    rng: &mut impl Rng,
) -> Result<TokenSeq> {
    let mut shuffled = layout.clone();
    shuffled.elements.shuffle(rng);
    flatten(&shuffled, vocab, max_elements)
}

fn decode_slot(slot: &[u32], index: usize, vocab: &Vocabulary) -> Result<Option<Element>> {
    let pad = vocab.pad();
    let mask = vocab.mask();
    for (j, &tok) in slot.iter().enumerate() {
        let m = Modality::from_index(j);
        if vocab.to_local(m, tok).is_none() {
            return Err(Error::ModalityMismatch {
                position: ATTRIBUTES * index + j,
                token: tok,
                modality: m.name(),
            });
        }
    }
    if slot.iter().all(|&t| t == pad) {
        return Ok(None);
    }
    if slot.iter().any(|&t| t == pad || t == mask) {
        return Err(Error::PartialElement { slot: index });
    }
    let category = vocab.token_category(slot[0]).expect("checked modality");
    Ok(Some(Element::new(
        category,
        BBox::new(
            vocab.decode(slot[1])?,
            vocab.decode(slot[2])?,
            vocab.decode(slot[3])?,
            vocab.decode(slot[4])?,
        ),
    )))
}

/// Inverse of [`flatten`] via centroid lookup; PAD slots are dropped.
pub fn unflatten(seq: &TokenSeq, vocab: &Vocabulary) -> Result<Layout> {
    let mut elements = Vec::new();
    for i in 0..seq.max_elements() {
        if let Some(e) = decode_slot(seq.slot(i), i, vocab)? {
            elements.push(e);
        }
    }
    Ok(Layout::new(elements))
}

/// Like [`unflatten`], but slots mixing content with PAD/MASK are dropped
/// instead of rejected. Returns the layout and the number of dropped slots.
pub fn unflatten_lenient(seq: &TokenSeq, vocab: &Vocabulary) -> Result<(Layout, usize)> {
    let mut elements = Vec::new();
    let mut dropped = 0;
    for i in 0..seq.max_elements() {
        match decode_slot(seq.slot(i), i, vocab) {
            Ok(Some(e)) => elements.push(e),
            Ok(None) => {}
            Err(Error::PartialElement { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((Layout::new(elements), dropped))
}
