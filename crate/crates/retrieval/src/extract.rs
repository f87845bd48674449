use ego_tree::NodeId;
use indexmap::IndexMap;
use scraper::{ElementRef, Html, Node, Selector};

use crate::index::CleanDocument;

const STRIPPED: [&str; 12] =
    ["script", "style", "nav", "header", "footer", "aside", "noscript", "form", "iframe", "svg", "button", "template"];
const BLOCKS: &str = "p, li, h1, h2, h3, h4, h5, h6, blockquote, pre, td, dd";

fn is_stripped(el: &ElementRef) -> bool {
    STRIPPED.contains(&el.value().name())
}

fn inside_stripped(el: &ElementRef) -> bool {
    is_stripped(el) || el.ancestors().filter_map(ElementRef::wrap).any(|a| is_stripped(&a))
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Visible text of `el`, skipping stripped subtrees.
fn visible_text(el: ElementRef) -> String {
    let mut out = String::new();
    for child in el.children() {
        match child.value() {
            Node::Text(t) => {
                out.push_str(t);
                out.push(' ');
            }
            Node::Element(_) => {
                if let Some(c) = ElementRef::wrap(child) {
                    if !is_stripped(&c) {
                        out.push_str(&visible_text(c));
                        out.push(' ');
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn link_text_len(el: ElementRef) -> usize {
    let a = Selector::parse("a").expect("static selector");
    el.select(&a).map(|l| collapse(&l.text().collect::<String>()).chars().count()).sum()
}

struct Block<'a> {
    el: ElementRef<'a>,
    text: String,
    score: f64,
}

/// Picks the subtree whose paragraphs carry the most non-link text and
/// returns its blocks as plain text. `None` when nothing readable remains.
pub fn extract_main_text(html: &str) -> (Option<String>, String) {
    let doc = Html::parse_document(html);
    let title = Selector::parse("title")
        .ok()
        .and_then(|s| doc.select(&s).next())
        .map(|t| collapse(&t.text().collect::<String>()))
        .filter(|t| !t.is_empty())
        .or_else(|| {
            let h1 = Selector::parse("h1").expect("static selector");
            doc.select(&h1).next().map(|t| collapse(&t.text().collect::<String>()))
        })
        .unwrap_or_default();

    let block_sel = Selector::parse(BLOCKS).expect("static selector");
    let block_names: Vec<&str> = BLOCKS.split(", ").collect();
    let mut blocks = Vec::new();
    for el in doc.select(&block_sel) {
        if inside_stripped(&el) {
            continue;
        }
        if el.ancestors().filter_map(ElementRef::wrap).any(|a| block_names.contains(&a.value().name())) {
            continue;
        }
        let text = collapse(&visible_text(el));
        let len = text.chars().count();
        if len == 0 {
            continue;
        }
        let links = link_text_len(el).min(len);
        let density = 1.0 - links as f64 / len as f64;
        let weight = if el.value().name().starts_with('h') && el.value().name().len() == 2 { 0.5 } else { 1.0 };
        blocks.push(Block { el, text, score: len as f64 * density * weight });
    }

    // Insertion order is document order, so ties go to the earlier node.
    let mut scores: IndexMap<NodeId, f64> = IndexMap::new();
    for b in &blocks {
        let mut ancestors = b.el.ancestors().filter_map(ElementRef::wrap);
        if let Some(parent) = ancestors.next() {
            *scores.entry(parent.id()).or_default() += b.score;
            if let Some(grand) = ancestors.next() {
                *scores.entry(grand.id()).or_default() += b.score / 2.0;
            }
        }
    }
    let best = scores
        .iter()
        .fold(None::<(NodeId, f64)>, |acc, (id, s)| match acc {
            Some((_, b)) if b >= *s => acc,
            _ => Some((*id, *s)),
        })
        .map(|(id, _)| id);

    let text = match best {
        Some(root) => blocks
            .iter()
            .filter(|b| b.el.ancestors().any(|a| a.id() == root))
            .map(|b| b.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n"),
        None => {
            let body = Selector::parse("body").expect("static selector");
            doc.select(&body).next().map(|b| collapse(&visible_text(b))).unwrap_or_default()
        }
    };
    let text = text.trim().to_string();
    (if text.is_empty() { None } else { Some(text) }, title)
}

pub fn clean_document(url: &str, html: &str) -> Option<CleanDocument> {
    let (text, title) = extract_main_text(html);
    text.map(|main_text| CleanDocument { url: url.to_string(), title, main_text })
}
