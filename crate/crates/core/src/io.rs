//! File formats: panel CSV ingestion, adjacency edge lists, persisted draws
//! and result tables, run metadata, and checkpoints.
//!
//! All tables are plain CSV with a header row and fixed column order;
//! floating-point values are written in shortest round-trip form, so a rerun
//! with the same seed produces byte-identical files. The pointwise
//! log-likelihood matrix is a line-oriented text file (one draw per line).

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{parse_edge_list, AdjacencyGraph, GraphError};
use crate::model::{ModelError, ModelSpec, PanelDataset, ParameterState, Variant};
use crate::outputs::{ClusterSummary, CumulativeRR, RRSurface, SummaryRow, Waic};
use crate::sampler::{BlockAcceptance, Checkpoint, LoglikKind, PosteriorDraws, SamplerConfig};
use crate::Real;

#[derive(Error, Debug)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    BadHeader {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path} line {line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicated (area, time) pair ({area}, {time})")]
    DuplicateCell { area: String, time: usize },
    #[error("panel is not rectangular; first missing (area, time) pairs: {0:?}")]
    MissingCells(Vec<String>),
    #[error("negative count {y} at area {area}, time {time}")]
    NegativeCount { area: String, time: usize, y: i64 },
    #[error("non-positive offset {offset} at area {area}")]
    BadOffset { area: String, offset: Real },
    #[error("area {area} has inconsistent offsets {a} and {b}")]
    InconsistentOffset { area: String, a: Real, b: Real },
    #[error("bad edge list {path}: {message}")]
    BadEdgeList { path: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Long-format panel as read from disk, before the graph is attached.
#[derive(Clone, Debug)]
pub struct PanelTable {
    pub area_ids: Vec<String>,
    pub y: Array2<u64>,
    pub x: Array2<Real>,
    pub offsets: Vec<Real>,
}

impl PanelTable {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.y.ncols()
    }

    pub fn into_dataset(self, graph: AdjacencyGraph) -> Result<PanelDataset, IoError> {
        Ok(PanelDataset::new(self.area_ids, self.y, self.x, self.offsets, graph)?)
    }
}

/// Read a long-format panel: header `area,time,y,x,offset`, one row per
/// (area, time). Area ids map to indices 1..n by first appearance; times
/// must tile 1..T exactly once per area.
pub fn load_panel(path: &Path) -> Result<PanelTable, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| IoError::Csv {
            path: path.display().to_string(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| IoError::Csv {
            path: path.display().to_string(),
            source,
        })?
        .clone();
    let expected = ["area", "time", "y", "x", "offset"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(IoError::BadHeader {
            path: path.display().to_string(),
            expected: expected.join(","),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut area_index: std::collections::HashMap<String, usize> = Default::default();
    let mut area_ids: Vec<String> = Vec::new();
    // (area, time) -> (y, x, offset)
    let mut cells: std::collections::HashMap<(usize, usize), (u64, Real, Real)> =
        Default::default();
    let mut t_max = 0usize;

    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|source| IoError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let bad = |message: String| IoError::BadRecord {
            path: path.display().to_string(),
            line,
            message,
        };
        if record.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let area = record[0].to_string();
        let time: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad time {:?}", &record[1])))?;
        if time == 0 {
            return Err(bad("time must be 1-based".into()));
        }
        let y: i64 = record[2]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad count {:?}", &record[2])))?;
        if y < 0 {
            return Err(IoError::NegativeCount { area, time, y });
        }
        let x: Real = record[3]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad exposure {:?}", &record[3])))?;
        let offset: Real = record[4]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad offset {:?}", &record[4])))?;
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(IoError::BadOffset { area, offset });
        }

        let next_index = area_ids.len();
        let i = *area_index.entry(area.clone()).or_insert_with(|| {
            area_ids.push(area.clone());
            next_index
        });
        if cells.insert((i, time), (y as u64, x, offset)).is_some() {
            return Err(IoError::DuplicateCell { area, time });
        }
        t_max = t_max.max(time);
    }

    let n = area_ids.len();
    let mut missing = Vec::new();
    for (i, id) in area_ids.iter().enumerate() {
        for t in 1..=t_max {
            if !cells.contains_key(&(i, t)) {
                if missing.len() < 10 {
                    missing.push(format!("({id}, {t})"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(IoError::MissingCells(missing));
    }

    let mut y = Array2::zeros((n, t_max));
    let mut x = Array2::zeros((n, t_max));
    let mut offsets = vec![0.0; n];
    for ((i, t), (yy, xx, oo)) in &cells {
        y[(*i, *t - 1)] = *yy;
        x[(*i, *t - 1)] = *xx;
        if *t == 1 {
            offsets[*i] = *oo;
        }
    }
    // Offsets are per-area; rows must agree.
    for ((i, _t), (_, _, oo)) in &cells {
        if (offsets[*i] - *oo).abs() > 0.0 {
            return Err(IoError::InconsistentOffset {
                area: area_ids[*i].clone(),
                a: offsets[*i],
                b: *oo,
            });
        }
    }

    Ok(PanelTable {
        area_ids,
        y,
        x,
        offsets,
    })
}

/// Write a panel in the long format `load_panel` reads.
pub fn write_panel(path: &Path, data: &PanelDataset) -> Result<(), IoError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| io_err(path, e))?);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "area,time,y,x,offset")?;
        for i in 0..data.n() {
            for t0 in 0..data.t_len() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    data.area_ids[i],
                    t0 + 1,
                    data.y[(i, t0)],
                    data.x[(i, t0)],
                    data.offsets[i]
                )?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

/// Load a 1-based edge list (`i j` per line, `#` comments) and build the
/// graph over `n` areas.
pub fn load_graph(path: &Path, n: usize) -> Result<AdjacencyGraph, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let edges = parse_edge_list(&text).map_err(|message| IoError::BadEdgeList {
        path: path.display().to_string(),
        message,
    })?;
    Ok(AdjacencyGraph::from_edges(&edges, n)?)
}

/// Write the unique undirected edges of a graph.
pub fn write_edge_list(path: &Path, graph: &AdjacencyGraph) -> Result<(), IoError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| io_err(path, e))?);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "# adjacency edge list, 1-based")?;
        for i in 0..graph.n() {
            for &j in graph.neighbors(i) {
                if j > i {
                    writeln!(w, "{} {}", i + 1, j + 1)?;
                }
            }
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

/// Load panel and edge list together.
pub fn load_dataset(panel: &Path, edges: &Path) -> Result<PanelDataset, IoError> {
    let table = load_panel(panel)?;
    let graph = load_graph(edges, table.n())?;
    table.into_dataset(graph)
}

// ---------------------------------------------------------------------------
// Fit artifacts
// ---------------------------------------------------------------------------

/// Metadata echoed next to the draw files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: ModelSpec,
    pub sampler: SamplerConfig,
    pub n_areas: usize,
    pub t_len: usize,
    pub n_draws: usize,
    pub acceptance: Vec<BlockAcceptance>,
    pub warnings: Vec<String>,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

/// Persist a fit: one CSV per parameter group, the line-oriented pointwise
/// log-likelihood matrix, the acceptance report, the area index, and
/// `run_meta.json`.
pub fn write_fit(
    outdir: &Path,
    data: &PanelDataset,
    model: &ModelSpec,
    draws: &PosteriorDraws,
) -> Result<(), IoError> {
    fs::create_dir_all(outdir).map_err(|e| io_err(outdir, e))?;
    let n = data.n();
    let t_len = data.t_len();
    let n_clusters = model.n_clusters;
    let p = model.crossbasis.dim();
    let spatial = model.variant == Variant::MixtureSpatial;

    let path = outdir.join("area_index.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "area,index")?;
        for (i, id) in data.area_ids.iter().enumerate() {
            writeln!(w, "{},{}", id, i + 1)?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))?;

    let path = outdir.join("draws_scalars.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "draw,alpha,r,sigma_u,sigma_v,sigma_gamma")?;
        for (k, st) in draws.draws.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                k + 1,
                st.alpha,
                st.r(),
                st.sigma_u,
                st.sigma_v,
                st.sigma_gamma
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))?;

    let path = outdir.join("draws_eta.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        let cols: Vec<String> = (1..=p).map(|j| format!("eta_{j}")).collect();
        writeln!(w, "draw,cluster,{}", cols.join(","))?;
        for (k, st) in draws.draws.iter().enumerate() {
            for c in 0..n_clusters {
                let vals: Vec<String> =
                    (0..p).map(|j| format!("{}", st.eta[(c, j)])).collect();
                writeln!(w, "{},{},{}", k + 1, c + 1, vals.join(","))?;
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))?;

    let vector_csv = |name: &str,
                      header_prefix: &str,
                      len: usize,
                      get: &dyn Fn(&ParameterState, usize) -> Real|
     -> Result<(), IoError> {
        let path = outdir.join(name);
        let mut w = create(&path)?;
        (|| -> std::io::Result<()> {
            let cols: Vec<String> =
                (1..=len).map(|j| format!("{header_prefix}_{j}")).collect();
            writeln!(w, "draw,{}", cols.join(","))?;
            for (k, st) in draws.draws.iter().enumerate() {
                let vals: Vec<String> = (0..len).map(|j| format!("{}", get(st, j))).collect();
                writeln!(w, "{},{}", k + 1, vals.join(","))?;
            }
            w.flush()
        })()
        .map_err(|e| io_err(&path, e))
    };
    vector_csv("draws_u.csv", "u", n, &|st, j| st.u[j])?;
    vector_csv("draws_v.csv", "v", n, &|st, j| st.v[j])?;
    vector_csv("draws_gamma.csv", "gamma", t_len, &|st, j| st.gamma[j])?;

    if n_clusters > 1 {
        let path = outdir.join("draws_z.csv");
        let mut w = create(&path)?;
        (|| -> std::io::Result<()> {
            let cols: Vec<String> = (1..=n).map(|j| format!("z_{j}")).collect();
            writeln!(w, "draw,{}", cols.join(","))?;
            for (k, st) in draws.draws.iter().enumerate() {
                let vals: Vec<String> =
                    st.z.iter().map(|z| format!("{}", z + 1)).collect();
                writeln!(w, "{},{}", k + 1, vals.join(","))?;
            }
            w.flush()
        })()
        .map_err(|e| io_err(&path, e))?;
    }

    if spatial {
        let path = outdir.join("draws_sigma_c.csv");
        let mut w = create(&path)?;
        (|| -> std::io::Result<()> {
            writeln!(w, "draw,cluster,sigma_uc,sigma_vc")?;
            for (k, st) in draws.draws.iter().enumerate() {
                for c in 0..n_clusters {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        k + 1,
                        c + 1,
                        st.sigma_uc[c],
                        st.sigma_vc[c]
                    )?;
                }
            }
            w.flush()
        })()
        .map_err(|e| io_err(&path, e))?;
    }

    let path = outdir.join("loglik.txt");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        for k in 0..draws.loglik.nrows() {
            let row: Vec<String> = (0..draws.loglik.ncols())
                .map(|o| format!("{}", draws.loglik[(k, o)]))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))?;

    let path = outdir.join("acceptance.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "block,attempts,accepts,rate,scale")?;
        for row in &draws.acceptance {
            writeln!(
                w,
                "{},{},{},{},{}",
                row.block, row.attempts, row.accepts, row.rate, row.scale
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))?;

    let meta = RunMeta {
        model: model.clone(),
        sampler: draws.config.clone(),
        n_areas: n,
        t_len,
        n_draws: draws.n_draws(),
        acceptance: draws.acceptance.clone(),
        warnings: draws.warnings.clone(),
    };
    write_json(&outdir.join("run_meta.json"), &meta)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Reload a persisted fit. Membership rows `q` and the spatial assignment
/// fields are not round-tripped (posterior summaries derive from z and η);
/// reconstructed states carry uniform q and zero fields.
pub fn read_fit(outdir: &Path) -> Result<(PosteriorDraws, RunMeta), IoError> {
    let meta: RunMeta = read_json(&outdir.join("run_meta.json"))?;
    let n = meta.n_areas;
    let t_len = meta.t_len;
    let n_clusters = meta.model.n_clusters;
    let p = meta.model.crossbasis.dim();
    let spatial = meta.model.variant == Variant::MixtureSpatial;

    let read_table = |name: &str| -> Result<Vec<Vec<String>>, IoError> {
        let path = outdir.join(name);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&path)
            .map_err(|source| IoError::Csv {
                path: path.display().to_string(),
                source,
            })?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|source| IoError::Csv {
                path: path.display().to_string(),
                source,
            })?;
            rows.push(record.iter().map(|s| s.to_string()).collect());
        }
        Ok(rows)
    };
    let parse_real = |s: &str, name: &str, line: usize| -> Result<Real, IoError> {
        s.parse().map_err(|_| IoError::BadRecord {
            path: outdir.join(name).display().to_string(),
            line,
            message: format!("bad number {s:?}"),
        })
    };

    let scalars = read_table("draws_scalars.csv")?;
    let n_draws = scalars.len();
    let mut states =
        vec![ParameterState::zeros(n, t_len, n_clusters, p, spatial); n_draws];
    for (k, row) in scalars.iter().enumerate() {
        states[k].alpha = parse_real(&row[1], "draws_scalars.csv", k + 2)?;
        states[k].log_r = parse_real(&row[2], "draws_scalars.csv", k + 2)?.ln();
        states[k].sigma_u = parse_real(&row[3], "draws_scalars.csv", k + 2)?;
        states[k].sigma_v = parse_real(&row[4], "draws_scalars.csv", k + 2)?;
        states[k].sigma_gamma = parse_real(&row[5], "draws_scalars.csv", k + 2)?;
    }
    for (ridx, row) in read_table("draws_eta.csv")?.iter().enumerate() {
        let k: usize = row[0].parse().unwrap_or(0);
        let c: usize = row[1].parse().unwrap_or(0);
        if k == 0 || c == 0 || k > n_draws {
            return Err(IoError::BadRecord {
                path: outdir.join("draws_eta.csv").display().to_string(),
                line: ridx + 2,
                message: "bad draw/cluster index".into(),
            });
        }
        for j in 0..p {
            states[k - 1].eta[(c - 1, j)] = parse_real(&row[2 + j], "draws_eta.csv", ridx + 2)?;
        }
    }
    for (k, row) in read_table("draws_u.csv")?.iter().enumerate() {
        for j in 0..n {
            states[k].u[j] = parse_real(&row[1 + j], "draws_u.csv", k + 2)?;
        }
    }
    for (k, row) in read_table("draws_v.csv")?.iter().enumerate() {
        for j in 0..n {
            states[k].v[j] = parse_real(&row[1 + j], "draws_v.csv", k + 2)?;
        }
    }
    for (k, row) in read_table("draws_gamma.csv")?.iter().enumerate() {
        for j in 0..t_len {
            states[k].gamma[j] = parse_real(&row[1 + j], "draws_gamma.csv", k + 2)?;
        }
    }
    if n_clusters > 1 {
        for (k, row) in read_table("draws_z.csv")?.iter().enumerate() {
            for j in 0..n {
                let z: usize = row[1 + j].parse().map_err(|_| IoError::BadRecord {
                    path: outdir.join("draws_z.csv").display().to_string(),
                    line: k + 2,
                    message: format!("bad label {:?}", &row[1 + j]),
                })?;
                states[k].z[j] = z - 1;
            }
        }
    }
    if spatial {
        for (ridx, row) in read_table("draws_sigma_c.csv")?.iter().enumerate() {
            let k: usize = row[0].parse().unwrap_or(0);
            let c: usize = row[1].parse().unwrap_or(0);
            if k >= 1 && k <= n_draws && c >= 1 && c <= n_clusters {
                states[k - 1].sigma_uc[c - 1] =
                    parse_real(&row[2], "draws_sigma_c.csv", ridx + 2)?;
                states[k - 1].sigma_vc[c - 1] =
                    parse_real(&row[3], "draws_sigma_c.csv", ridx + 2)?;
            }
        }
    }

    let path = outdir.join("loglik.txt");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut rows: Vec<Vec<Real>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            row.push(tok.parse().map_err(|_| IoError::BadRecord {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("bad number {tok:?}"),
            })?);
        }
        rows.push(row);
    }
    let n_obs = rows.first().map_or(0, |r| r.len());
    let mut loglik = Array2::zeros((rows.len(), n_obs));
    for (k, row) in rows.iter().enumerate() {
        for (o, v) in row.iter().enumerate() {
            loglik[(k, o)] = *v;
        }
    }

    let draws = PosteriorDraws {
        draws: states,
        loglik,
        acceptance: meta.acceptance.clone(),
        config: meta.sampler.clone(),
        warnings: meta.warnings.clone(),
    };
    Ok((draws, meta))
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

fn cluster_label(cluster: Option<usize>) -> String {
    match cluster {
        Some(c) => format!("{}", c + 1),
        None => "overall".to_string(),
    }
}

/// Append one surface to `rr_surface.csv` (and its plug-in twin).
pub fn write_rr_surfaces(outdir: &Path, surfaces: &[RRSurface]) -> Result<(), IoError> {
    let path = outdir.join("rr_surface.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "exposure,lag,rr,rr_low,rr_high,cluster")?;
        for s in surfaces {
            for (g, &x) in s.exposure_grid.iter().enumerate() {
                for (li, &lag) in s.lag_grid.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        x,
                        lag,
                        s.rr[(g, li)],
                        s.rr_low[(g, li)],
                        s.rr_high[(g, li)],
                        cluster_label(s.cluster)
                    )?;
                }
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))?;

    let path = outdir.join("rr_surface_plugin.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "exposure,lag,rr,cluster")?;
        for s in surfaces {
            for (g, &x) in s.exposure_grid.iter().enumerate() {
                for (li, &lag) in s.lag_grid.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        x,
                        lag,
                        s.rr_plugin[(g, li)],
                        cluster_label(s.cluster)
                    )?;
                }
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))
}

pub fn write_cumulative_rr(outdir: &Path, curves: &[CumulativeRR]) -> Result<(), IoError> {
    let path = outdir.join("cum_rr.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "exposure,rr,rr_low,rr_high,cluster")?;
        for c in curves {
            for (g, &x) in c.exposure_grid.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    x,
                    c.rr[g],
                    c.rr_low[g],
                    c.rr_high[g],
                    cluster_label(c.cluster)
                )?;
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))
}

#[derive(Serialize, Deserialize)]
pub struct WaicFile {
    pub waic: Real,
    pub lppd: Real,
    pub p_waic2: Real,
    pub n_obs: usize,
    pub n_draws: usize,
    pub loglik_kind: LoglikKind,
}

pub fn write_waic(
    outdir: &Path,
    waic: &Waic,
    n_obs: usize,
    n_draws: usize,
    kind: LoglikKind,
) -> Result<(), IoError> {
    write_json(
        &outdir.join("waic.json"),
        &WaicFile {
            waic: waic.waic,
            lppd: waic.lppd,
            p_waic2: waic.p_waic2,
            n_obs,
            n_draws,
            loglik_kind: kind,
        },
    )
}

pub fn write_cluster_summary(
    outdir: &Path,
    data: &PanelDataset,
    summary: &ClusterSummary,
) -> Result<(), IoError> {
    let path = outdir.join("cluster_summary.csv");
    let mut w = create(&path)?;
    let n_clusters = summary.membership_probs.ncols();
    (|| -> std::io::Result<()> {
        let cols: Vec<String> = (1..=n_clusters).map(|c| format!("prob_{c}")).collect();
        writeln!(w, "area,{},map,entropy", cols.join(","))?;
        for i in 0..data.n() {
            let probs: Vec<String> = (0..n_clusters)
                .map(|c| format!("{}", summary.membership_probs[(i, c)]))
                .collect();
            writeln!(
                w,
                "{},{},{},{}",
                data.area_ids[i],
                probs.join(","),
                summary.map_assignment[i] + 1,
                summary.entropy[i]
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))
}

pub fn write_effects(
    outdir: &Path,
    data: &PanelDataset,
    spatial: &[SummaryRow],
    temporal: &[SummaryRow],
) -> Result<(), IoError> {
    let path = outdir.join("effects_spatial.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "area,mean,low,high")?;
        for (i, row) in spatial.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                data.area_ids[i], row.mean, row.low, row.high
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))?;

    let path = outdir.join("effects_temporal.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "time,mean,low,high")?;
        for (t, row) in temporal.iter().enumerate() {
            writeln!(w, "{},{},{},{}", t + 1, row.mean, row.low, row.high)?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))
}

pub fn write_ess(outdir: &Path, rows: &[(String, Real)]) -> Result<(), IoError> {
    let path = outdir.join("ess.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "param,ess")?;
        for (name, ess) in rows {
            writeln!(w, "{name},{ess}")?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))
}

/// One row per fitted model in a `compare` sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareRow {
    pub variant: String,
    pub n_clusters: usize,
    pub waic: Real,
    pub lppd: Real,
    pub p_waic2: Real,
    pub median_entropy: Real,
}

pub fn write_compare(
    outdir: &Path,
    rows: &[CompareRow],
    entropies: &[(String, usize, Vec<(String, Real)>)],
) -> Result<(), IoError> {
    let path = outdir.join("waic_by_c.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "variant,c,waic,lppd,p_waic2,median_entropy")?;
        for row in rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.variant, row.n_clusters, row.waic, row.lppd, row.p_waic2, row.median_entropy
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))?;

    let path = outdir.join("entropy_by_c.csv");
    let mut w = create(&path)?;
    (|| -> std::io::Result<()> {
        writeln!(w, "variant,c,area,entropy")?;
        for (variant, c, areas) in entropies {
            for (area, h) in areas {
                writeln!(w, "{variant},{c},{area},{h}")?;
            }
        }
        w.flush()
    })()
    .map_err(|e| io_err(&path, e))
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), IoError> {
    write_json(path, ckpt)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_panel, SimulationScenario};
    use tempfile::tempdir;

    #[test]
    fn panel_roundtrip_is_exact() {
        let mut scenario = SimulationScenario::desk_default();
        scenario.graph = crate::sim::GraphKind::Grid { rows: 3, cols: 3 };
        scenario.t_len = 15;
        let sim = simulate_panel(&scenario, 9).unwrap();
        let dir = tempdir().unwrap();
        let panel = dir.path().join("panel.csv");
        let edges = dir.path().join("edges.txt");
        write_panel(&panel, &sim.dataset).unwrap();
        write_edge_list(&edges, &sim.dataset.graph).unwrap();
        let loaded = load_dataset(&panel, &edges).unwrap();
        assert_eq!(loaded.area_ids, sim.dataset.area_ids);
        assert_eq!(loaded.y, sim.dataset.y);
        assert_eq!(loaded.x, sim.dataset.x);
        assert_eq!(loaded.offsets, sim.dataset.offsets);
        assert_eq!(loaded.graph, sim.dataset.graph);
    }

    #[test]
    fn small_panel_shapes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "area,time,y,x,offset\nB,1,0,0.1,5\nB,2,3,0.2,5\nB,3,1,0.3,5\nA,1,2,0.4,7\nA,2,0,0.5,7\nA,3,4,0.6,7\n",
        )
        .unwrap();
        let table = load_panel(&path).unwrap();
        assert_eq!(table.n(), 2);
        assert_eq!(table.t_len(), 3);
        // First appearance order.
        assert_eq!(table.area_ids, vec!["B".to_string(), "A".to_string()]);
        assert_eq!(table.y[(0, 1)], 3);
        assert_eq!(table.offsets, vec![5.0, 7.0]);
    }

    #[test]
    fn duplicate_cell_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "area,time,y,x,offset\nA,1,0,0.1,5\nA,1,1,0.2,5\n",
        )
        .unwrap();
        assert!(matches!(
            load_panel(&path),
            Err(IoError::DuplicateCell { .. })
        ));
    }

    #[test]
    fn missing_cells_listed() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "area,time,y,x,offset\nA,1,0,0.1,5\nA,3,1,0.2,5\nB,1,1,0.3,2\n",
        )
        .unwrap();
        match load_panel(&path) {
            Err(IoError::MissingCells(cells)) => {
                assert!(cells.contains(&"(A, 2)".to_string()));
                assert!(cells.contains(&"(B, 2)".to_string()));
                assert!(cells.contains(&"(B, 3)".to_string()));
            }
            other => panic!("expected MissingCells, got {other:?}"),
        }
    }

    #[test]
    fn negative_count_and_bad_offset_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "area,time,y,x,offset\nA,1,-2,0.1,5\n").unwrap();
        assert!(matches!(
            load_panel(&path),
            Err(IoError::NegativeCount { y: -2, .. })
        ));
        std::fs::write(&path, "area,time,y,x,offset\nA,1,2,0.1,0\n").unwrap();
        assert!(matches!(load_panel(&path), Err(IoError::BadOffset { .. })));
        std::fs::write(
            &path,
            "area,time,y,x,offset\nA,1,2,0.1,5\nA,2,2,0.1,6\n",
        )
        .unwrap();
        assert!(matches!(
            load_panel(&path),
            Err(IoError::InconsistentOffset { .. })
        ));
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "region,week,y,x,offset\nA,1,0,0.1,5\n").unwrap();
        assert!(matches!(load_panel(&path), Err(IoError::BadHeader { .. })));
    }

    #[test]
    fn case_study_shape_loads() {
        // The real case-study layout: 581 areas × 71 weeks.
        let dir = tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        let mut text = String::from("area,time,y,x,offset\n");
        for i in 0..581 {
            for t in 1..=71 {
                text.push_str(&format!("M{i:03},{t},{},0.5,1000\n", (i + t) % 7));
            }
        }
        std::fs::write(&path, text).unwrap();
        let table = load_panel(&path).unwrap();
        assert_eq!(table.n(), 581);
        assert_eq!(table.t_len(), 71);
    }
}
