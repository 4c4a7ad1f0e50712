//! Rendered outputs: token heatmaps and metric summary tables.
//!
//! Rendering is pure string building, so identical inputs give byte
//! identical output.

use std::fmt::Write;

use crate::attribution::AttributionVector;
use crate::error::{Error, Result};
use crate::faithfulness::MethodAggregate;
use crate::text::{TokenSequence, Vocabulary, OOV_TOKEN, PAD_ID};

const POSITIVE_RGB: &str = "214,39,40";
const NEGATIVE_RGB: &str = "31,119,180";

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Renders one explained sequence as a standalone HTML page. Each
/// non-pad token is tinted red when its score pushes toward the
/// explained class and blue when it pushes away, with opacity scaling
/// linearly to the largest magnitude present. Pad positions are not
/// rendered. `caption` names the method and model for the page header.
pub fn render_heatmap(
    vocab: &Vocabulary,
    seq: &TokenSequence,
    attr: &AttributionVector,
    caption: &str,
) -> Result<String> {
    if attr.scores.len() != seq.len() {
        return Err(Error::ScoreLengthMismatch {
            got: attr.scores.len(),
            expected: seq.len(),
        });
    }
    let max_abs = attr
        .scores
        .iter()
        .fold(0.0f64, |acc, s| acc.max(s.abs()));

    let mut spans = String::new();
    for (pos, &id) in seq.ids().iter().enumerate() {
        if id == PAD_ID {
            continue;
        }
        let word = if id == crate::text::OOV_ID {
            OOV_TOKEN
        } else {
            vocab.word_of(id).ok_or(Error::IdOutOfRange {
                id,
                size: vocab.size(),
            })?
        };
        let score = attr.scores[pos];
        let alpha = if max_abs > 0.0 { score.abs() / max_abs } else { 0.0 };
        let rgb = if score >= 0.0 { POSITIVE_RGB } else { NEGATIVE_RGB };
        write!(
            spans,
            "<span style=\"background-color: rgba({rgb},{alpha:.3})\" title=\"{score:.6}\">{}</span>\n",
            escape_html(word)
        )
        .expect("string write cannot fail");
    }

    let caption = escape_html(caption);
    let explained = attr.explained_class;
    let method = attr.method.name();
    Ok(format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>{caption}</title>\n<style>\n\
         body {{ font-family: sans-serif; margin: 2rem; max-width: 60rem; }}\n\
         .tokens span {{ display: inline-block; padding: 1px 4px; margin: 1px; border-radius: 3px; }}\n\
         .meta, .legend {{ color: #555; font-size: 0.9rem; }}\n\
         </style>\n</head>\n<body>\n\
         <h1>Token attribution</h1>\n\
         <p class=\"meta\">{caption} | method {method} | explained class {explained}</p>\n\
         <div class=\"tokens\">\n{spans}</div>\n\
         <p class=\"legend\">Red pushes toward the explained class, blue pushes away; \
         opacity scales with score magnitude. Hover a token for its exact score.</p>\n\
         </body>\n</html>\n"
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Renders per-method aggregate metrics, one row per method, in the
/// given order. All numbers carry six decimal places.
pub fn render_metrics_table(rows: &[MethodAggregate], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("method,delta_comp,delta_suff,aopc,flip_at_k,time_s\n");
            for r in rows {
                writeln!(
                    out,
                    "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    r.method.name(),
                    r.delta_comp,
                    r.delta_suff,
                    r.aopc,
                    r.flip_at_k,
                    r.time_s
                )
                .expect("string write cannot fail");
            }
        }
        TableFormat::Markdown => {
            out.push_str("| Method | Δ_comp | Δ_suff | AOPC | Flip@k | Time [s] |\n");
            out.push_str("|--------|-------:|-------:|-----:|-------:|---------:|\n");
            for r in rows {
                writeln!(
                    out,
                    "| {} | {:.6} | {:.6} | {:.6} | {:.6} | {:.6} |",
                    r.method.name(),
                    r.delta_comp,
                    r.delta_suff,
                    r.aopc,
                    r.flip_at_k,
                    r.time_s
                )
                .expect("string write cannot fail");
            }
        }
    }
    out
}
