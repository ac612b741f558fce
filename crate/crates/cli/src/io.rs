//! Text formats for models, datasets, sequence corpora, and the CSV outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bethe_core::crf::{Sequence, SequenceDataset, DEFAULT_MAX_LENGTH};
use bethe_core::graph::{build_graph, Dataset, Graph, PairwiseBinaryModel};
use bethe_core::{CvmReport, ParameterSampleSet, Provenance};
use nalgebra::DMatrix;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] bethe_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn at(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

fn parse_num<T: std::str::FromStr>(token: &str, line: usize, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| at(line, format!("invalid {what} `{token}`")))
}

/// Parses `nodes <n>`, `bias <i> <theta>` and `edge <i> <j> <w>` lines.
pub fn parse_model(text: &str) -> Result<PairwiseBinaryModel> {
    let mut nodes: Option<usize> = None;
    let mut biases = Vec::new();
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = strip_comment(raw);
        if body.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = body.split_whitespace().collect();
        match (tokens[0], tokens.len()) {
            ("nodes", 2) => {
                if nodes.is_some() {
                    return Err(at(line, "repeated `nodes` line"));
                }
                nodes = Some(parse_num(tokens[1], line, "node count")?);
            }
            ("bias", 3) => {
                let i: usize = parse_num(tokens[1], line, "node index")?;
                biases.push((line, i, parse_num::<f64>(tokens[2], line, "bias")?));
            }
            ("edge", 4) => {
                let i: usize = parse_num(tokens[1], line, "node index")?;
                let j: usize = parse_num(tokens[2], line, "node index")?;
                edges.push((line, i, j, parse_num::<f64>(tokens[3], line, "weight")?));
            }
            (kw, n) => {
                return Err(at(
                    line,
                    format!("unrecognized `{kw}` line with {n} tokens"),
                ))
            }
        }
        if nodes.is_none() {
            return Err(at(line, "`nodes <n>` must come first"));
        }
    }
    let n = nodes.ok_or_else(|| FormatError::Invalid("model file has no `nodes` line".into()))?;
    let pairs: Vec<(usize, usize)> = edges.iter().map(|&(_, i, j, _)| (i, j)).collect();
    let graph = build_graph(n, &pairs).map_err(|e| {
        let line = edges
            .iter()
            .find(|&&(_, i, j, _)| i == j || i >= n || j >= n)
            .map(|e| e.0)
            .or_else(|| {
                edges.iter().enumerate().find_map(|(a, e)| {
                    let key = (e.1.min(e.2), e.1.max(e.2));
                    edges[..a]
                        .iter()
                        .any(|p| (p.1.min(p.2), p.1.max(p.2)) == key)
                        .then_some(e.0)
                })
            });
        match line {
            Some(l) => at(l, e.to_string()),
            None => e.into(),
        }
    })?;
    let mut theta = vec![0.0; n];
    for (line, i, v) in biases {
        if i >= n {
            return Err(at(line, format!("node {i} out of range 0..{n}")));
        }
        theta[i] = v;
    }
    let mut w = vec![0.0; graph.edge_count()];
    for (_, i, j, v) in edges {
        w[graph.edge_index(i, j).expect("edge present")] = v;
    }
    Ok(PairwiseBinaryModel::new(graph, &theta, &w)?)
}

pub fn read_model(path: &Path) -> Result<PairwiseBinaryModel> {
    parse_model(&fs::read_to_string(path)?)
}

pub fn format_model(model: &PairwiseBinaryModel) -> String {
    let graph = model.graph();
    let mut s = format!("nodes {}\n", graph.node_count());
    for (i, t) in model.theta().iter().enumerate() {
        let _ = writeln!(s, "bias {i} {t:e}");
    }
    for (&(i, j), w) in graph.edges().iter().zip(model.w()) {
        let _ = writeln!(s, "edge {i} {j} {w:e}");
    }
    s
}

fn parse_bits(tokens: &[&str], line: usize) -> Result<Vec<u8>> {
    tokens
        .iter()
        .map(|t| match *t {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(at(line, format!("expected 0 or 1, got `{other}`"))),
        })
        .collect()
}

/// One configuration per line; the width comes from `node_count` or the first line.
pub fn parse_dataset(text: &str, node_count: Option<usize>) -> Result<Dataset> {
    let mut width = node_count;
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = strip_comment(raw);
        if body.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = body.split_whitespace().collect();
        let w = *width.get_or_insert(tokens.len());
        if tokens.len() != w {
            return Err(at(
                line,
                format!("expected {w} values, got {}", tokens.len()),
            ));
        }
        rows.push(parse_bits(&tokens, line)?);
    }
    if rows.is_empty() {
        return Err(FormatError::Invalid("dataset has no rows".into()));
    }
    Ok(Dataset::new(width.unwrap_or(0), &rows)?)
}

pub fn read_dataset(path: &Path, node_count: Option<usize>) -> Result<Dataset> {
    parse_dataset(&fs::read_to_string(path)?, node_count)
}

pub fn format_dataset(data: &Dataset) -> String {
    let mut s = String::new();
    for row in data.iter() {
        let tokens: Vec<&str> = row
            .iter()
            .map(|&b| if b == 1 { "1" } else { "0" })
            .collect();
        s.push_str(&tokens.join(" "));
        s.push('\n');
    }
    s
}

/// Sequences separated by blank lines; each line is `label g_1 .. g_A` with
/// `?` as the label of unlabelled sequences. Sequences longer than `max_len`
/// are truncated.
pub fn parse_sequences(text: &str, width: usize, max_len: usize) -> Result<SequenceDataset> {
    let mut sequences = Vec::new();
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut labels: Vec<Option<u8>> = Vec::new();
    let mut first_line = 0;
    let flush = |rows: &mut Vec<Vec<u8>>,
                 labels: &mut Vec<Option<u8>>,
                 first: usize,
                 out: &mut Vec<Sequence>| {
        if rows.is_empty() {
            return Ok(());
        }
        let t = if labels.iter().all(Option::is_some) {
            Some(labels.iter().map(|l| l.unwrap_or(0)).collect())
        } else if labels.iter().all(Option::is_none) {
            None
        } else {
            return Err(at(first, "sequence mixes `?` and numeric labels"));
        };
        let seq = Sequence::from_rows(rows, t)?.truncated(max_len);
        out.push(seq);
        rows.clear();
        labels.clear();
        Ok(())
    };
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = strip_comment(raw);
        if body.is_empty() {
            flush(&mut rows, &mut labels, first_line, &mut sequences)?;
            continue;
        }
        if rows.is_empty() {
            first_line = line;
        }
        let tokens: Vec<&str> = body.split_whitespace().collect();
        if tokens.len() != width + 1 {
            return Err(at(
                line,
                format!(
                    "expected {} tokens (label and {width} features), got {}",
                    width + 1,
                    tokens.len()
                ),
            ));
        }
        labels.push(match tokens[0] {
            "?" => None,
            t => Some(parse_bits(&[t], line)?[0]),
        });
        rows.push(parse_bits(&tokens[1..], line)?);
    }
    flush(&mut rows, &mut labels, first_line, &mut sequences)?;
    if sequences.is_empty() {
        return Err(FormatError::Invalid(
            "sequence file has no sequences".into(),
        ));
    }
    Ok(SequenceDataset::new(width, sequences)?)
}

/// Reads a sequence corpus, truncating at `max_len` lines
/// ([`DEFAULT_MAX_LENGTH`] in the experiments).
pub fn ingest_sequences(path: &Path, width: usize, max_len: usize) -> Result<SequenceDataset> {
    parse_sequences(&fs::read_to_string(path)?, width, max_len)
}

pub fn default_max_length() -> usize {
    DEFAULT_MAX_LENGTH
}

pub fn format_sequences(data: &SequenceDataset) -> String {
    let mut s = String::new();
    for (k, seq) in data.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        for i in 0..seq.len() {
            let label = seq.labels().map_or("?".to_string(), |t| t[i].to_string());
            s.push_str(&label);
            for g in seq.g(i) {
                s.push(' ');
                s.push(if *g == 1 { '1' } else { '0' });
            }
            s.push('\n');
        }
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Row-major matrix with a header of feature names.
pub fn format_matrix_csv(names: &[String], m: &DMatrix<f64>) -> String {
    let mut s = names.join(",");
    s.push('\n');
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_matrix_csv(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let set = parse_samples_csv(text)?;
    let names = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap_or("")
        .split(',')
        .map(str::to_string)
        .collect();
    let m = DMatrix::from_row_iterator(set.len(), set.dim(), set.as_flat().iter().copied());
    Ok((names, m))
}

/// Sample sets: a `# method=.. seed=.. thinning=..` line, a header of feature
/// names, then one sample per row.
pub fn format_samples_csv(names: &[String], set: &ParameterSampleSet) -> String {
    let p = &set.provenance;
    let mut s = format!(
        "# method={} seed={} thinning={}\n",
        p.method, p.seed, p.thinning
    );
    s.push_str(&names.join(","));
    s.push('\n');
    for row in set.rows() {
        let r: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn parse_provenance(line: &str) -> Provenance {
    let mut p = Provenance {
        method: "unknown".into(),
        seed: 0,
        thinning: 1,
    };
    for kv in line.trim_start_matches('#').split_whitespace() {
        match kv.split_once('=') {
            Some(("method", v)) => p.method = v.to_string(),
            Some(("seed", v)) => p.seed = v.parse().unwrap_or(0),
            Some(("thinning", v)) => p.thinning = v.parse().unwrap_or(1),
            _ => {}
        }
    }
    p
}

pub fn parse_samples_csv(text: &str) -> Result<ParameterSampleSet> {
    let provenance = text.lines().find(|l| l.starts_with('#')).map_or(
        Provenance {
            method: "unknown".into(),
            seed: 0,
            thinning: 1,
        },
        parse_provenance,
    );
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let dim = reader.headers()?.len();
    let mut data = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k + 2, |p| p.line() as usize);
        if rec.len() != dim {
            return Err(at(
                line,
                format!("expected {dim} columns, got {}", rec.len()),
            ));
        }
        for field in rec.iter() {
            let v: f64 = parse_num(field.trim(), line, "number")?;
            if !v.is_finite() {
                return Err(at(line, "non-finite sample"));
            }
            data.push(v);
        }
    }
    Ok(ParameterSampleSet::new(dim, data, provenance)?)
}

pub fn read_samples_csv(path: &Path) -> Result<ParameterSampleSet> {
    parse_samples_csv(&fs::read_to_string(path)?)
}

/// Header `total,<names>` and one row: the total then per-dimension scores.
pub fn format_cvm_csv(names: &[String], report: &CvmReport) -> String {
    let mut s = String::from("total");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    s.push_str(&fmt_f64(report.total));
    for v in &report.per_dimension {
        s.push(',');
        s.push_str(&fmt_f64(*v));
    }
    s.push('\n');
    s
}

/// Header `backend,iterations,grad_norm,converged,<names>` and one row.
pub fn format_fit_csv(names: &[String], fit: &bethe_core::fit::FitResult) -> String {
    let mut s = String::from("backend,iterations,grad_norm,converged");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    let _ = write!(
        s,
        "{},{},{},{}",
        fit.backend.name(),
        fit.iterations,
        fmt_f64(fit.grad_norm),
        fit.converged
    );
    for v in &fit.lambda_map {
        s.push(',');
        s.push_str(&fmt_f64(*v));
    }
    s.push('\n');
    s
}

pub fn feature_names(graph: &Graph) -> Vec<String> {
    graph.feature_names()
}

/// `s<a>` for state weights and `t<a>` for transition weights.
pub fn crf_feature_names(width: usize) -> Vec<String> {
    (0..width)
        .map(|a| format!("s{a}"))
        .chain((0..width).map(|a| format!("t{a}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip() {
        let text = "# chain\nnodes 3\nbias 0 1.5\nedge 1 0 -0.5\nedge 1 2 2\n";
        let m = parse_model(text).unwrap();
        assert_eq!(m.theta(), &[1.5, 0.0, 0.0]);
        assert_eq!(m.graph().edges(), &[(0, 1), (1, 2)]);
        assert_eq!(m.w(), &[-0.5, 2.0]);
        assert_eq!(parse_model(&format_model(&m)).unwrap(), m);
    }

    #[test]
    fn model_errors_carry_line_numbers() {
        let e = parse_model("nodes 2\nedge 0 0 1\n")
            .unwrap_err()
            .to_string();
        assert!(e.starts_with("line 2"), "{e}");
        let e = parse_model("nodes 2\nedge 0 1 1\nedge 1 0 2\n")
            .unwrap_err()
            .to_string();
        assert!(e.starts_with("line 3"), "{e}");
        let e = parse_model("nodes 2\nbias 5 1\n").unwrap_err().to_string();
        assert!(e.starts_with("line 2"), "{e}");
        let e = parse_model("bias 0 1\n").unwrap_err().to_string();
        assert!(e.starts_with("line 1"), "{e}");
        assert!(parse_model("nodes 2\nedge 0 1 x\n").is_err());
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let d = parse_dataset("0 1 1\n1 0 0\n", None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(parse_dataset(&format_dataset(&d), Some(3)).unwrap(), d);
        let e = parse_dataset("0 1\n1 2\n", None).unwrap_err().to_string();
        assert!(e.starts_with("line 2"), "{e}");
        assert!(parse_dataset("0 1 1\n", Some(2)).is_err());
        assert!(parse_dataset("\n", None).is_err());
    }

    #[test]
    fn sequences_parse_truncate_and_round_trip() {
        let text = "1 1 0\n0 0 1\n\n? 1 1\n? 0 0\n? 1 0\n";
        let d = parse_sequences(text, 2, 100).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.sequences()[0].labels(), Some(&[1u8, 0][..]));
        assert!(d.sequences()[1].labels().is_none());
        assert_eq!(parse_sequences(&format_sequences(&d), 2, 100).unwrap(), d);
        let long: String = (0..120).map(|k| format!("{} 1 0\n", k % 2)).collect();
        assert_eq!(
            parse_sequences(&long, 2, 100).unwrap().sequences()[0].len(),
            100
        );
    }

    #[test]
    fn sequence_errors_carry_line_numbers() {
        let e = parse_sequences("1 1 0\n1 1\n", 2, 100)
            .unwrap_err()
            .to_string();
        assert!(e.starts_with("line 2"), "{e}");
        let e = parse_sequences("1 1 0\n\n1 1 3\n", 2, 100)
            .unwrap_err()
            .to_string();
        assert!(e.starts_with("line 3"), "{e}");
        assert!(parse_sequences("", 2, 100).is_err());
        assert!(parse_sequences("1 1 0\n? 0 1\n", 2, 100).is_err());
    }

    #[test]
    fn samples_round_trip() {
        let set = ParameterSampleSet::new(
            2,
            vec![0.5, -1.0, 2.0, 1e-300],
            Provenance {
                method: "bethe-laplace".into(),
                seed: 9,
                thinning: 3,
            },
        )
        .unwrap();
        let names = vec!["n0".to_string(), "n1".to_string()];
        let back = parse_samples_csv(&format_samples_csv(&names, &set)).unwrap();
        assert_eq!(back, set);
        let (n, m) =
            parse_matrix_csv(&format_matrix_csv(&names, &DMatrix::identity(2, 2))).unwrap();
        assert_eq!(n, names);
        assert_eq!(m, DMatrix::identity(2, 2));
        assert!(parse_samples_csv("a,b\n1,2\n3\n").is_err());
    }
}
