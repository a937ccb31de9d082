//! Readers for StereoSet and CrowS-Pairs files.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::crows::{CrowsPair, PairLabel};
use super::stereo::StereoExample;
use crate::error::{Error, Result};
use crate::tokenize::is_punctuation;

/// One JSON object per line with the fields of [`StereoExample`]. Blank
/// lines are skipped.
pub fn read_stereo_jsonl<R: BufRead>(reader: R) -> Result<Vec<StereoExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: StereoExample = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        ex.validate().map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct PublicFile {
    data: PublicData,
}

#[derive(Deserialize)]
struct PublicData {
    #[serde(default)]
    intrasentence: Vec<PublicItem>,
    #[serde(default)]
    intersentence: Vec<PublicItem>,
}

#[derive(Deserialize)]
struct PublicItem {
    #[serde(default)]
    id: String,
    bias_type: String,
    context: String,
    sentences: Vec<PublicSentence>,
}

#[derive(Deserialize)]
struct PublicSentence {
    sentence: String,
    gold_label: String,
}

/// Placeholder marking the blank in intrasentence contexts.
const BLANK: &str = "BLANK";

/// The public StereoSet layout (`data.intrasentence` and
/// `data.intersentence`, three labelled sentences per item). The unrelated
/// option is dropped and the blank placeholder is removed from contexts.
pub fn read_stereoset_public<R: Read>(reader: R) -> Result<Vec<StereoExample>> {
    let file: PublicFile = serde_json::from_reader(reader).map_err(|e| Error::Format(format!("stereoset: {e}")))?;
    let mut out = Vec::new();
    for (kind, items) in [("intrasentence", file.data.intrasentence), ("intersentence", file.data.intersentence)] {
        for (n, item) in items.into_iter().enumerate() {
            let find = |label: &str| {
                item.sentences
                    .iter()
                    .find(|s| s.gold_label == label)
                    .map(|s| s.sentence.clone())
                    .ok_or_else(|| Error::Format(format!("{kind}[{n}] {}: no {label} sentence", item.id)))
            };
            let ex = StereoExample {
                context: item.context.split_whitespace().filter(|w| w.trim_matches(is_punctuation) != BLANK).collect::<Vec<_>>().join(" "),
                stereo_sentence: find("stereotype")?,
                anti_sentence: find("anti-stereotype")?,
                category: item.bias_type.clone(),
            };
            ex.validate()
                .map_err(|e| Error::Format(format!("{kind}[{n}] {}: {e}", item.id)))?;
            out.push(ex);
        }
    }
    Ok(out)
}

/// CrowS-Pairs CSV. Columns are located by header name; extra columns are
/// ignored.
pub fn read_crows_csv<R: Read>(reader: R) -> Result<Vec<CrowsPair>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Format(format!("crows header: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("crows: missing column {name:?}")))
    };
    let (more, less, label, bias) = (col("sent_more")?, col("sent_less")?, col("stereo_antistereo")?, col("bias_type")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        let field = |c: usize| {
            rec.get(c)
                .map(str::to_string)
                .ok_or_else(|| Error::parse(line, format!("missing field {c}")))
        };
        let pair = CrowsPair {
            sent_more: field(more)?,
            sent_less: field(less)?,
            stereo_antistereo: field(label)?.parse::<PairLabel>().map_err(|e| Error::parse(line, e.to_string()))?,
            bias_type: field(bias)?,
        };
        pair.validate().map_err(|e| Error::parse(line, e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Picks a StereoSet reader from the file contents: a leading `{` followed
/// by a top-level `data` key means the public layout, anything else is
/// read as JSON lines.
pub fn load_stereo(path: impl AsRef<Path>) -> Result<Vec<StereoExample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(&text) {
        if map.contains_key("data") {
            return read_stereoset_public(text.as_bytes());
        }
    }
    read_stereo_jsonl(text.as_bytes())
}

pub fn load_crows(path: impl AsRef<Path>) -> Result<Vec<CrowsPair>> {
    read_crows_csv(open(path.as_ref())?)
}

pub fn write_stereo_jsonl<W: Write>(examples: &[StereoExample], mut out: W) -> Result<()> {
    for ex in examples {
        let line = serde_json::to_string(ex).expect("example serializes");
        writeln!(out, "{line}").map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

pub fn write_crows_csv<W: Write>(pairs: &[CrowsPair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["sent_more", "sent_less", "stereo_antistereo", "bias_type"]).map_err(err)?;
    for p in pairs {
        let label = match p.stereo_antistereo {
            PairLabel::Stereo => "stereo",
            PairLabel::Antistereo => "antistereo",
        };
        w.write_record([p.sent_more.as_str(), p.sent_less.as_str(), label, p.bias_type.as_str()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}
