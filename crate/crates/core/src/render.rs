//! SVG rendering of layouts.

use std::fmt::Write;

use crate::layout::Layout;

const LEGEND_ROW: f64 = 16.0;
const LEGEND_WIDTH: f64 = 140.0;

/// Stable color of a category id.
pub fn category_color(category: u32) -> String {
    // splitmix64 finalizer for a well-spread hue.
    let mut z = (category as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let hue = z % 360;
    format!("hsl({hue},65%,55%)")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Render one layout at its canvas size. `names[c - 1]` labels category `c`
/// in the legend; missing names fall back to the id. The legend lists the
/// categories present in the layout and sits right of the canvas.
pub fn render_svg(layout: &Layout, names: &[String]) -> String {
    let (cw, ch) = (layout.canvas.0 as f64, layout.canvas.1 as f64);
    let mut cats: Vec<u32> = layout.elements.iter().map(|e| e.category).collect();
    cats.sort_unstable();
    cats.dedup();
    let legend_w = if cats.is_empty() { 0.0 } else { LEGEND_WIDTH };
    let height = ch.max(LEGEND_ROW * (cats.len() as f64 + 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}">"#,
        w = cw + legend_w
    );
    let _ = writeln!(
        s,
        r##"<rect x="0" y="0" width="{cw}" height="{ch}" fill="#ffffff" stroke="#000000" stroke-width="1"/>"##
    );
    for e in &layout.elements {
        let b = &e.bbox;
        let color = category_color(e.category);
        let _ = writeln!(
            s,
            r#"<rect class="element" data-category="{}" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{color}" fill-opacity="0.5" stroke="{color}" stroke-width="1.5"/>"#,
            e.category,
            b.left() * cw,
            b.top() * ch,
            b.w * cw,
            b.h * ch,
        );
    }
    for (row, c) in cats.iter().enumerate() {
        let y = LEGEND_ROW * (row as f64 + 0.5);
        let name = names
            .get(*c as usize - 1)
            .cloned()
            .unwrap_or_else(|| format!("category {c}"));
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{y:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif">{}</text>"#,
            cw + 8.0,
            category_color(*c),
            cw + 22.0,
            y + 9.0,
            escape(&name)
        );
    }
    s.push_str("</svg>\n");
    s
}
