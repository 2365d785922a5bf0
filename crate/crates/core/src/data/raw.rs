use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Domain;
use crate::error::{Error, Result};

/// One interaction record of the JSON-lines corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub domain: Domain,
    pub rating: f64,
    pub ts: i64,
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_interactions(path: &Path) -> Result<Vec<RawInteraction>> {
    let records: Vec<RawInteraction> = read_jsonl(path)?;
    if let Some(bad) = records.iter().find(|r| r.domain == Domain::M) {
        return Err(Error::Data(format!("record for user {} tagged with the mixed domain", bad.user)));
    }
    Ok(records)
}

#[derive(Deserialize)]
struct AmazonReview {
    #[serde(rename = "reviewerID")]
    reviewer_id: String,
    asin: String,
    #[serde(default)]
    overall: f64,
    #[serde(rename = "unixReviewTime")]
    unix_review_time: i64,
}

/// Converts one Amazon review-JSON file (`reviewerID`, `asin`, `overall`,
/// `unixReviewTime` per line) into interactions tagged with `domain`.
pub fn convert_amazon_reviews(path: &Path, domain: Domain) -> Result<Vec<RawInteraction>> {
    let reviews: Vec<AmazonReview> = read_jsonl(path)?;
    Ok(reviews
        .into_iter()
        .map(|r| RawInteraction {
            user: r.reviewer_id,
            item: r.asin,
            domain,
            rating: r.overall,
            ts: r.unix_review_time,
        })
        .collect())
}
