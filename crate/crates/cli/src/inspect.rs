use std::collections::BTreeMap;
use std::path::Path;

use equibit_core::canonical;
use equibit_core::ledger::{holdings, issuer_summary, known_issuances, verify_authenticity, ChainState, OutPoint};
use equibit_core::simnet::Transcript;
use serde_json::{json, Value};

use crate::run::read;
use crate::{CliError, Format};

pub struct Options {
    pub format: Format,
    pub at: Option<u64>,
    pub outpoint: Option<String>,
    pub swap: Option<String>,
}

enum Artifact {
    Transcript(Box<Transcript>),
    Chain(Box<ChainState>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Query {
    IssuerSummary,
    HolderBalances,
    Authenticity,
    SwapState,
    Book,
}

impl Query {
    fn parse(s: &str) -> Result<Query, CliError> {
        Ok(match s {
            "issuer-summary" => Query::IssuerSummary,
            "holder-balances" => Query::HolderBalances,
            "authenticity" => Query::Authenticity,
            "swap-state" => Query::SwapState,
            "book" => Query::Book,
            other => return Err(CliError::UnknownQuery(other.to_string())),
        })
    }
}

/// A report: column names plus one JSON object per row.
struct Report {
    columns: Vec<&'static str>,
    rows: Vec<Value>,
}

fn load(path: &Path) -> Result<Artifact, CliError> {
    let text = read(path)?;
    if let Ok(t) = Transcript::from_json(&text) {
        if !t.verify() {
            return Err(CliError::Artifact(format!("{}: transcript digest does not match its contents", path.display())));
        }
        return Ok(Artifact::Transcript(Box::new(t)));
    }
    ChainState::import(&text)
        .map(|c| Artifact::Chain(Box::new(c)))
        .map_err(|e| CliError::Artifact(format!("{} is neither a transcript nor a chain export: {e}", path.display())))
}

pub fn cmd_inspect(path: &Path, query: &str, opts: &Options) -> Result<String, CliError> {
    let query = Query::parse(query)?;
    let artifact = load(path)?;
    let report = match (query, &artifact) {
        (Query::IssuerSummary, Artifact::Transcript(t)) => issuers(
            t.final_state
                .issuers
                .iter()
                .map(|(n, s)| (n.clone(), *s)),
        ),
        (Query::IssuerSummary, Artifact::Chain(c)) => {
            let mut seen = BTreeMap::new();
            for key in known_issuances(c).keys() {
                seen.entry(key.issuer.to_hex()).or_insert_with(|| issuer_summary(c, &key.issuer));
            }
            issuers(seen.into_iter())
        }
        (Query::HolderBalances, Artifact::Transcript(t)) => {
            if opts.at.is_some() {
                return Err(CliError::Artifact(
                    "holder-balances at a past time needs a chain export".into(),
                ));
            }
            let rows = t
                .final_state
                .nodes
                .iter()
                .flat_map(|(name, n)| {
                    n.holdings
                        .iter()
                        .map(move |(asset, units)| json!({"holder": name, "asset": asset, "units": units}))
                })
                .collect();
            Report {
                columns: vec!["holder", "asset", "units"],
                rows,
            }
        }
        (Query::HolderBalances, Artifact::Chain(c)) => chain_balances(c, opts.at),
        (Query::Authenticity, Artifact::Chain(c)) => {
            let op: OutPoint = opts
                .outpoint
                .as_deref()
                .ok_or_else(|| CliError::Artifact("authenticity needs --outpoint TXID:VOUT".into()))?
                .parse()
                .map_err(|e| CliError::Artifact(format!("bad outpoint: {e}")))?;
            let verdict = verify_authenticity(&op, c).map_err(|e| CliError::Artifact(e.to_string()))?;
            Report {
                columns: vec!["outpoint", "verdict"],
                rows: vec![json!({"outpoint": op.to_string(), "verdict": verdict})],
            }
        }
        (Query::SwapState, Artifact::Transcript(t)) => {
            let rows: Vec<Value> = t
                .final_state
                .swaps
                .iter()
                .filter(|(label, _)| opts.swap.as_ref().is_none_or(|s| s == *label))
                .map(|(label, s)| {
                    json!({"swap": label, "buyer": s.buyer, "seller": s.seller, "quantity": s.quantity,
                           "price": s.price, "state": s.state, "step": s.step, "settled": s.settled})
                })
                .collect();
            if let (Some(label), true) = (&opts.swap, rows.is_empty()) {
                return Err(CliError::Artifact(format!("no swap labelled {label:?}")));
            }
            Report {
                columns: vec!["swap", "buyer", "seller", "quantity", "price", "state", "step", "settled"],
                rows,
            }
        }
        (Query::Book, Artifact::Transcript(t)) => {
            let time = opts.at.unwrap_or(t.final_state.time);
            let rows = t
                .final_state
                .offers
                .iter()
                .filter(|o| o.open_at(time))
                .map(|o| {
                    json!({"offer": o.label, "maker": o.maker, "side": o.side, "issuer": o.issuer,
                           "security": o.security, "quantity": o.quantity,
                           "price": format!("{}/{}", o.price.num, o.price.den), "expiry": o.expiry})
                })
                .collect();
            Report {
                columns: vec!["offer", "maker", "side", "issuer", "security", "quantity", "price", "expiry"],
                rows,
            }
        }
        (Query::Authenticity, Artifact::Transcript(_)) => {
            return Err(CliError::Artifact("authenticity needs a chain export".into()))
        }
        (Query::SwapState | Query::Book, Artifact::Chain(_)) => {
            return Err(CliError::Artifact("swap-state and book need a transcript".into()))
        }
    };
    Ok(render(&report, opts.format))
}

fn issuers(it: impl Iterator<Item = (String, equibit_core::ledger::IssuerSummary)>) -> Report {
    Report {
        columns: vec!["issuer", "authorized", "at_origin", "circulating", "cancelled"],
        rows: it
            .map(|(name, s)| {
                json!({"issuer": name, "authorized": s.authorized_total, "at_origin": s.at_origin,
                       "circulating": s.circulating, "cancelled": s.cancelled})
            })
            .collect(),
    }
}

fn chain_balances(chain: &ChainState, at: Option<u64>) -> Report {
    let height = match at {
        Some(t) => chain.height_at_time(t).unwrap_or(0),
        None => chain.height(),
    };
    let utxo = chain.utxo_at_height(height);
    let mut rows = Vec::new();
    let mut blank: BTreeMap<String, u64> = BTreeMap::new();
    for o in utxo.values().filter(|o| o.issuer_info.is_none()) {
        if let Some(owner) = o.owner() {
            *blank.entry(owner.to_hex()).or_default() += o.amount;
        }
    }
    for (holder, units) in blank {
        rows.push(json!({"holder": holder, "asset": "blank", "units": units, "height": height}));
    }
    for key in known_issuances(chain).keys() {
        for (holder, units) in holdings(chain, &utxo, key) {
            let asset = format!("{}/{}", key.issuer.to_hex(), key.security_name);
            rows.push(json!({"holder": holder.to_hex(), "asset": asset, "units": units, "height": height}));
        }
    }
    Report {
        columns: vec!["holder", "asset", "units", "height"],
        rows,
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) if s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit()) => s[..12].to_string(),
        Value::String(s) => match s.split_once('/') {
            Some((a, rest)) if a.len() == 64 => format!("{}/{rest}", &a[..12]),
            _ => s.clone(),
        },
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => canonical::to_string(&report.rows) + "\n",
        Format::Table => {
            let cells: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| report.columns.iter().map(|c| cell(&r[*c])).collect())
                .collect();
            let widths: Vec<usize> = report
                .columns
                .iter()
                .enumerate()
                .map(|(i, c)| cells.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
                .collect();
            let line = |fields: Vec<&str>| {
                let mut s: String = fields
                    .iter()
                    .zip(&widths)
                    .map(|(f, w)| format!("{f:<w$}  "))
                    .collect();
                s.truncate(s.trim_end().len());
                s + "\n"
            };
            let mut out = line(report.columns.clone());
            for r in &cells {
                out += &line(r.iter().map(String::as_str).collect());
            }
            if cells.is_empty() {
                out += "(no rows)\n";
            }
            out
        }
    }
}
