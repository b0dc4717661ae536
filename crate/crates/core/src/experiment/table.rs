use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::metrics::{names, ScoreReport};
use crate::model::TaskKind;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("no reports to tabulate")]
    Empty,
    #[error("reports mix tasks {0} and {1}")]
    MixedTasks(TaskKind, TaskKind),
    #[error("report for {0} has no shot count")]
    MissingShots(TaskKind),
}

/// Slot-filling columns: domain key and header.
const SNIPS_DOMAINS: [(&str, &str); 7] = [
    ("addtoplaylist", "PlayL"),
    ("bookrestaurant", "Rest."),
    ("getweather", "Weather"),
    ("playmusic", "PlayM."),
    ("ratebook", "RateBook"),
    ("searchcreativework", "SearchC."),
    ("searchscreeningevent", "Find."),
];

const FEWSHOTWOZ_DOMAINS: [(&str, &str); 7] = [
    ("restaurant", "restaurant"),
    ("laptop", "laptop"),
    ("hotel", "hotel"),
    ("tv", "tv"),
    ("attraction", "attraction"),
    ("train", "train"),
    ("taxi", "taxi"),
];

enum Columns {
    /// One column per domain plus an unweighted Avg.
    Domains {
        metric: &'static str,
        known: &'static [(&'static str, &'static str)],
    },
    /// One column per metric, averaged over everything in the row.
    Metrics(&'static [(&'static str, &'static str)]),
}

struct Layout {
    name: &'static str,
    columns: Columns,
}

fn layouts(task: TaskKind) -> Vec<Layout> {
    match task {
        TaskKind::SlotFilling => vec![Layout {
            name: "slot_filling",
            columns: Columns::Domains {
                metric: names::F1,
                known: &SNIPS_DOMAINS,
            },
        }],
        TaskKind::Intent => vec![Layout {
            name: "intent",
            columns: Columns::Metrics(&[(names::MICRO, "Micro"), (names::MACRO, "Macro"), (names::ACC, "Acc")]),
        }],
        TaskKind::Act => vec![Layout {
            name: "act",
            columns: Columns::Metrics(&[(names::MICRO, "Micro"), (names::MACRO, "Macro"), (names::ACC, "Acc")]),
        }],
        TaskKind::Dst => vec![Layout {
            name: "dst",
            columns: Columns::Metrics(&[(names::JOINT, "Joint"), (names::SLOT, "Slot")]),
        }],
        TaskKind::Nlg => vec![
            Layout {
                name: "bleu",
                columns: Columns::Domains {
                    metric: names::BLEU,
                    known: &FEWSHOTWOZ_DOMAINS,
                },
            },
            Layout {
                name: "slr",
                columns: Columns::Domains {
                    metric: names::SLR,
                    known: &FEWSHOTWOZ_DOMAINS,
                },
            },
        ],
    }
}

/// A rendered result table: header plus formatted rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("| {} |\n", self.header.join(" | "));
        let align: Vec<&str> = self
            .header
            .iter()
            .enumerate()
            .map(|(i, _)| if i == 0 { ":---" } else { "---:" })
            .collect();
        out.push_str(&format!("| {} |\n", align.join(" | ")));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

fn fmt4(x: f64) -> String {
    format!("{:.4}", round4(x))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn domain_key(domain: &str, known: &[(&str, &str)]) -> String {
    let d = domain.to_lowercase();
    known
        .iter()
        .find(|(key, header)| *key == d || header.to_lowercase() == d)
        .map_or(d, |(key, _)| key.to_string())
}

/// Checks that every report is for one task and carries a shot count.
fn check_reports(reports: &[ScoreReport]) -> Result<TaskKind, TableError> {
    let first = reports.first().ok_or(TableError::Empty)?;
    for r in reports {
        if r.task != first.task {
            return Err(TableError::MixedTasks(first.task, r.task));
        }
        if r.shots.is_none() {
            return Err(TableError::MissingShots(r.task));
        }
    }
    Ok(first.task)
}

type RowKey = (String, usize);

fn row_key(r: &ScoreReport) -> RowKey {
    (r.model.clone().unwrap_or_default(), r.shots.unwrap_or(0))
}

/// Builds the tables for `task`, one row per (model, shots) with values
/// averaged over seeds. Domain tables round each cell to four decimals and
/// average the rounded cells into Avg.
pub fn tables(reports: &[ScoreReport], task: TaskKind) -> Result<Vec<Table>, TableError> {
    let found = check_reports(reports)?;
    if found != task {
        return Err(TableError::MixedTasks(task, found));
    }
    let rows: BTreeSet<RowKey> = reports.iter().map(row_key).collect();
    let mut out = Vec::new();
    for layout in layouts(task) {
        let mut header = vec!["Model".to_string(), "Shots".to_string()];
        let mut body = Vec::new();
        match layout.columns {
            Columns::Domains { metric, known } => {
                let seen: BTreeSet<String> = reports
                    .iter()
                    .map(|r| domain_key(r.domain.as_deref().unwrap_or("all"), known))
                    .collect();
                let mut columns: Vec<(String, String)> =
                    known.iter().map(|(k, h)| (k.to_string(), h.to_string())).collect();
                for d in &seen {
                    if !known.iter().any(|(k, _)| k == d) {
                        columns.push((d.clone(), d.clone()));
                    }
                }
                header.extend(columns.iter().map(|(_, h)| h.clone()));
                header.push("Avg".into());
                for key in &rows {
                    let mut row = vec![key.0.clone(), key.1.to_string()];
                    let mut cells = Vec::new();
                    for (domain, _) in &columns {
                        let values: Vec<f64> = reports
                            .iter()
                            .filter(|r| &row_key(r) == key)
                            .filter(|r| &domain_key(r.domain.as_deref().unwrap_or("all"), known) == domain)
                            .filter_map(|r| r.get(metric))
                            .collect();
                        match mean(&values) {
                            Some(v) => {
                                cells.push(round4(v));
                                row.push(fmt4(v));
                            }
                            None => row.push("-".into()),
                        }
                    }
                    row.push(mean(&cells).map_or("-".into(), fmt4));
                    body.push(row);
                }
            }
            Columns::Metrics(metrics) => {
                header.extend(metrics.iter().map(|(_, h)| h.to_string()));
                for key in &rows {
                    let mut row = vec![key.0.clone(), key.1.to_string()];
                    for (metric, _) in metrics {
                        let values: Vec<f64> = reports
                            .iter()
                            .filter(|r| &row_key(r) == key)
                            .filter_map(|r| r.get(metric))
                            .collect();
                        row.push(mean(&values).map_or("-".into(), fmt4));
                    }
                    body.push(row);
                }
            }
        }
        out.push(Table {
            name: layout.name.to_string(),
            header,
            rows: body,
        });
    }
    Ok(out)
}

/// Markdown rendering of [`tables`], tables separated by a blank line.
pub fn emit_table(reports: &[ScoreReport], task: TaskKind) -> Result<String, TableError> {
    let rendered: Vec<String> = tables(reports, task)?
        .iter()
        .map(|t| {
            if task == TaskKind::Nlg {
                format!("{}\n\n{}", t.name.to_uppercase(), t.to_markdown())
            } else {
                t.to_markdown()
            }
        })
        .collect();
    Ok(rendered.join("\n"))
}

/// `model,shots,domain,metric,value` rows, averaged over seeds.
pub fn curve_csv(reports: &[ScoreReport]) -> String {
    let mut acc: BTreeMap<(String, usize, String, String), Vec<f64>> = BTreeMap::new();
    for r in reports {
        let (model, shots) = row_key(r);
        let domain = r.domain.clone().unwrap_or_else(|| "all".into());
        for (metric, value) in &r.metrics {
            acc.entry((model.clone(), shots, domain.clone(), metric.clone()))
                .or_default()
                .push(*value);
        }
    }
    let mut out = String::from("model,shots,domain,metric,value\n");
    for ((model, shots, domain, metric), values) in acc {
        let v = mean(&values).expect("non-empty");
        out.push_str(&format!("{model},{shots},{domain},{metric},{}\n", fmt4(v)));
    }
    out
}
