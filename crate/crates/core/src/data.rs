//! Datasets: the built-in function catalog, CSV tables with stratified
//! k-fold splits, MNIST-style IDX files, and feature normalization.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};
use crate::rng::Rng;

/// Sampling stays this far inside each variable's range.
pub const RANGE_INSET: f64 = 1e-9;

/// Rows of features and targets. Classification targets hold the class
/// index as a single value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<Self> {
        if x.len() != y.len() {
            return shape(format!("{} feature rows but {} target rows", x.len(), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn out_dim(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i].clone()).collect(),
        }
    }

    /// Class indices of a classification dataset.
    pub fn labels(&self) -> Vec<usize> {
        self.y.iter().map(|r| r[0] as usize).collect()
    }

    /// Writes `x0,..,y0,..` columns with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header: Vec<String> = (0..self.in_dim())
            .map(|i| format!("x{i}"))
            .chain((0..self.out_dim()).map(|i| format!("y{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (x, y) in self.x.iter().zip(&self.y) {
            let row: Vec<String> = x.iter().chain(y).map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Var {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug)]
pub struct FunctionDef {
    pub id: &'static str,
    pub formula: &'static str,
    pub vars: Vec<Var>,
    pub eval: fn(&[f64]) -> f64,
}

impl FunctionDef {
    pub fn arity(&self) -> usize {
        self.vars.len()
    }
}

fn def(
    id: &'static str,
    formula: &'static str,
    vars: &[(&'static str, f64, f64)],
    eval: fn(&[f64]) -> f64,
) -> FunctionDef {
    FunctionDef {
        id,
        formula,
        vars: vars.iter().map(|&(name, lo, hi)| Var { name, lo, hi }).collect(),
        eval,
    }
}

fn xy(lo: f64, hi: f64) -> [(&'static str, f64, f64); 2] {
    [("x", lo, hi), ("y", lo, hi)]
}

fn same(names: &[&'static str], lo: f64, hi: f64) -> Vec<(&'static str, f64, f64)> {
    names.iter().map(|&n| (n, lo, hi)).collect()
}

/// The elementary (`E.*`), composite (`C.*`) and physics (`I.*`, `II.*`)
/// regression targets.
pub fn builtin_functions() -> Vec<FunctionDef> {
    use std::f64::consts::PI;
    let mut out = vec![
        def("E.0", "x+y", &xy(0.0, 1.0), |v| v[0] + v[1]),
        def("E.1", "1/(x+y)", &xy(0.0, 1.0), |v| 1.0 / (v[0] + v[1])),
        def("E.2", "(x+y)^2", &xy(0.0, 1.0), |v| (v[0] + v[1]).powi(2)),
        def("E.3", "exp(x+y)", &xy(0.0, 1.0), |v| (v[0] + v[1]).exp()),
        def("E.4", "ln(x+y)", &xy(0.0, 1.0), |v| (v[0] + v[1]).ln()),
        def("E.5", "sin(x+y)", &xy(0.0, 1.0), |v| (v[0] + v[1]).sin()),
        def("E.6", "cos(x+y)", &xy(0.0, 1.0), |v| (v[0] + v[1]).cos()),
        def("E.7", "tan(x+y)", &xy(0.0, 1.0), |v| (v[0] + v[1]).tan()),
        def("E.8", "arcsin(x+y)", &xy(0.0, 0.5), |v| (v[0] + v[1]).asin()),
        def("E.9", "arccos(x+y)", &xy(0.0, 0.5), |v| (v[0] + v[1]).acos()),
        def("E.10", "arctan(x+y)", &xy(0.0, 0.5), |v| (v[0] + v[1]).atan()),
        def("E.11", "sinh(x+y)", &xy(0.0, 1.0), |v| (v[0] + v[1]).sinh()),
        def("E.12", "cosh(x+y)", &xy(0.0, 1.0), |v| (v[0] + v[1]).cosh()),
        def("E.13", "tanh(x+y)", &xy(0.0, 1.0), |v| (v[0] + v[1]).tanh()),
        def("E.14", "arcsinh(x+y)", &xy(0.0, 0.5), |v| (v[0] + v[1]).asinh()),
        def("E.15", "arccosh(x+y)", &xy(0.5, 1.0), |v| (v[0] + v[1]).acosh()),
        def("E.16", "arctanh(x+y)", &xy(0.0, 0.5), |v| (v[0] + v[1]).atanh()),
        def("C.0", "(x+y)+1/(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s + 1.0 / s
        }),
        def("C.1", "(x+y)+(x+y)^2", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s + s * s
        }),
        def("C.2", "(x+y)^2+exp(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s * s + s.exp()
        }),
        def("C.3", "exp(x+y)+ln(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s.exp() + s.ln()
        }),
        def("C.4", "(x+y)^2+sin(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s * s + s.sin()
        }),
        def("C.5", "cos(x+y)+arccos(x+y)", &xy(0.0, 0.5), |v| {
            let s = v[0] + v[1];
            s.cos() + s.acos()
        }),
        def("C.6", "exp(x+y)*1/(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s.exp() / s
        }),
        def("C.7", "(x+y)^2*ln(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s * s * s.ln()
        }),
        def("C.8", "(x+y)*sin(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s * s.sin()
        }),
        def("C.9", "exp(x+y)*ln(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s.exp() * s.ln()
        }),
        def("C.10", "sin(x+y)*sinh(x+y)", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            s.sin() * s.sinh()
        }),
        def("C.11", "arccos(x+y)*arctanh(x+y)", &xy(0.0, 0.5), |v| {
            let s = v[0] + v[1];
            s.acos() * s.atanh()
        }),
        def("C.12", "exp(1/(x+y)+exp(x+y))", &xy(0.0, 0.5), |v| {
            let s = v[0] + v[1];
            (1.0 / s + s.exp()).exp()
        }),
        def("C.13", "exp(sin(x+y)+cos(x+y))", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            (s.sin() + s.cos()).exp()
        }),
        def("C.14", "ln((x+y)^2+exp(x+y))", &xy(0.5, 1.0), |v| {
            let s = v[0] + v[1];
            (s * s + s.exp()).ln()
        }),
        def("C.15", "tan(exp(x+y)+ln(x+y))", &xy(0.0, 1.0), |v| {
            let s = v[0] + v[1];
            (s.exp() + s.ln()).tan()
        }),
        def("C.16", "1/(1+exp(-x-y))", &xy(0.0, 1.0), |v| {
            1.0 / (1.0 + (-v[0] - v[1]).exp())
        }),
    ];
    out.extend([
        def(
            "I.6.2",
            "exp(-theta^2/(2 sigma^2))/(sqrt(2 pi) sigma)",
            &same(&["theta", "sigma"], 1.0, 3.0),
            |v| (-(v[0] * v[0]) / (2.0 * v[1] * v[1])).exp() / ((2.0 * PI).sqrt() * v[1]),
        ),
        def(
            "I.6.2b",
            "exp(-(theta-theta1)^2/(2 sigma^2))/(sqrt(2 pi) sigma)",
            &same(&["sigma", "theta", "theta1"], 1.0, 3.0),
            |v| (-(v[1] - v[2]).powi(2) / (2.0 * v[0] * v[0])).exp() / ((2.0 * PI).sqrt() * v[0]),
        ),
        def(
            "I.12.11",
            "q (Ef + B v sin(theta))",
            &same(&["q", "Ef", "B", "v", "theta"], 1.0, 5.0),
            |v| v[0] * (v[1] + v[2] * v[3] * v[4].sin()),
        ),
        def(
            "I.13.12",
            "G m1 m2 (1/r2 - 1/r1)",
            &same(&["G", "m1", "m2", "r1", "r2"], 1.0, 5.0),
            |v| v[0] * v[1] * v[2] * (1.0 / v[4] - 1.0 / v[3]),
        ),
        def(
            "I.15.3x",
            "(x - u t)/sqrt(1 - u^2/c^2)",
            &[("x", 5.0, 10.0), ("u", 1.0, 2.0), ("c", 3.0, 20.0), ("t", 1.0, 2.0)],
            |v| (v[0] - v[1] * v[3]) / (1.0 - v[1] * v[1] / (v[2] * v[2])).sqrt(),
        ),
        def("I.16.6", "(u+v)/(1+u v/c^2)", &same(&["c", "v", "u"], 1.0, 5.0), |v| {
            (v[2] + v[1]) / (1.0 + v[2] * v[1] / (v[0] * v[0]))
        }),
        def(
            "I.18.4",
            "(m1 r1 + m2 r2)/(m1 + m2)",
            &same(&["m1", "m2", "r1", "r2"], 1.0, 5.0),
            |v| (v[0] * v[2] + v[1] * v[3]) / (v[0] + v[1]),
        ),
        def(
            "I.26.2",
            "arcsin(n sin(theta2))",
            &[("n", 0.0, 1.0), ("theta2", 1.0, 5.0)],
            |v| (v[0] * v[1].sin()).asin(),
        ),
        def("I.27.6", "1/(1/d1 + n/d2)", &same(&["d1", "d2", "n"], 1.0, 5.0), |v| {
            1.0 / (1.0 / v[0] + v[2] / v[1])
        }),
        def(
            "I.29.16",
            "sqrt(x1^2 + x2^2 - 2 x1 x2 cos(theta1 - theta2))",
            &same(&["x1", "x2", "theta1", "theta2"], 1.0, 5.0),
            |v| (v[0] * v[0] + v[1] * v[1] - 2.0 * v[0] * v[1] * (v[2] - v[3]).cos()).sqrt(),
        ),
        def(
            "I.30.3",
            "Int0 sin(n theta/2)^2 / sin(theta/2)^2",
            &same(&["Int0", "theta", "n"], 1.0, 5.0),
            |v| v[0] * (v[2] * v[1] / 2.0).sin().powi(2) / (v[1] / 2.0).sin().powi(2),
        ),
        def(
            "I.30.5",
            "arcsin(lambda/(n d))",
            &[("lambda", 1.0, 2.0), ("d", 2.0, 5.0), ("n", 1.0, 5.0)],
            |v| (v[0] / (v[2] * v[1])).asin(),
        ),
        def(
            "I.37.4",
            "I1 + I2 + 2 sqrt(I1 I2) cos(delta)",
            &same(&["I1", "I2", "delta"], 1.0, 5.0),
            |v| v[0] + v[1] + 2.0 * (v[0] * v[1]).sqrt() * v[2].cos(),
        ),
        def(
            "I.40.1",
            "n0 exp(-m g x/(kb T))",
            &same(&["n0", "m", "g", "x", "kb", "T"], 1.0, 5.0),
            |v| v[0] * (-(v[1] * v[2] * v[3]) / (v[4] * v[5])).exp(),
        ),
        def(
            "I.44.4",
            "n kb T ln(V2/V1)",
            &same(&["n", "kb", "T", "V1", "V2"], 1.0, 5.0),
            |v| v[0] * v[1] * v[2] * (v[4] / v[3]).ln(),
        ),
        def(
            "I.50.26",
            "x1 (cos(omega t) + alpha cos(omega t)^2)",
            &same(&["x1", "omega", "t", "alpha"], 1.0, 5.0),
            |v| {
                let c = (v[1] * v[2]).cos();
                v[0] * (c + v[3] * c * c)
            },
        ),
        def(
            "II.2.42",
            "kappa (T2 - T1) A / d",
            &same(&["kappa", "T1", "T2", "A", "d"], 1.0, 3.0),
            |v| v[0] * (v[2] - v[1]) * v[3] / v[4],
        ),
        def(
            "II.6.15a",
            "3 z pd sqrt(x^2 + y^2) / (4 pi epsilon r^5)",
            &same(&["epsilon", "pd", "r", "x", "y", "z"], 1.0, 3.0),
            |v| 3.0 * v[5] * v[1] * (v[3] * v[3] + v[4] * v[4]).sqrt() / (4.0 * PI * v[0] * v[2].powi(5)),
        ),
        def(
            "II.11.17",
            "n0 (1 + pd Ef cos(theta)/(kb T))",
            &same(&["n0", "kb", "T", "theta", "pd", "Ef"], 1.0, 3.0),
            |v| v[0] * (1.0 + v[4] * v[5] * v[3].cos() / (v[1] * v[2])),
        ),
        def(
            "II.11.27",
            "n alpha/(1 - n alpha/3) epsilon Ef",
            &[
                ("n", 0.0, 1.0),
                ("alpha", 0.0, 1.0),
                ("epsilon", 1.0, 2.0),
                ("Ef", 1.0, 2.0),
            ],
            |v| v[0] * v[1] / (1.0 - v[0] * v[1] / 3.0) * v[2] * v[3],
        ),
        def(
            "II.35.18",
            "n0/(exp(mu B/(kb T)) + exp(-mu B/(kb T)))",
            &same(&["n0", "kb", "T", "mu", "B"], 1.0, 3.0),
            |v| {
                let a = v[3] * v[4] / (v[1] * v[2]);
                v[0] / (a.exp() + (-a).exp())
            },
        ),
        def("II.38.3", "Y A x / d", &same(&["Y", "A", "d", "x"], 1.0, 5.0), |v| {
            v[0] * v[1] * v[3] / v[2]
        }),
    ]);
    out
}

pub fn find_function(id: &str) -> Result<FunctionDef> {
    builtin_functions()
        .into_iter()
        .find(|f| f.id == id)
        .ok_or_else(|| Error::Config(format!("unknown function id {id:?}")))
}

/// Samples `n` points uniformly inside the variable ranges and splits them
/// evenly: the first half trains, the second half tests.
pub fn gen_function_dataset(def: &FunctionDef, n: usize, seed: u64) -> Result<Split> {
    if n < 2 {
        return config("function datasets need at least two samples");
    }
    let mut rng = Rng::new(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let p: Vec<f64> = def
            .vars
            .iter()
            .map(|v| rng.uniform_in(v.lo + RANGE_INSET, v.hi - RANGE_INSET))
            .collect();
        y.push(vec![(def.eval)(&p)]);
        x.push(p);
    }
    let half = n / 2;
    let test = Dataset {
        x: x.split_off(half),
        y: y.split_off(half),
    };
    Ok(Split {
        train: Dataset { x, y },
        test,
    })
}

/// A CSV table with a string-valued label column.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub data: Dataset,
    /// Sorted distinct labels; targets index into this list.
    pub classes: Vec<String>,
    pub columns: Vec<String>,
}

pub fn read_csv(path: &Path, label_column: &str) -> Result<Table> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(1, format!("no column named {label_column:?}")))?;
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let mut feats = Vec::with_capacity(header.len() - 1);
        for (i, cell) in rec.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.to_string());
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(line, format!("non-numeric cell {cell:?} in column {:?}", header[i])))?;
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    let classes: Vec<String> = raw_labels
        .iter()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let y = raw_labels.iter().map(|l| vec![index[l.as_str()] as f64]).collect();
    let columns = header
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h)
        .collect();
    Ok(Table {
        data: Dataset { x: rows, y },
        classes,
        columns,
    })
}

/// Stratified folds: each class is shuffled and dealt round-robin across
/// folds. With `k == 1` the single split trains and tests on everything.
pub fn k_fold(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k == 0 || k > data.len().max(1) {
        return config(format!("k must lie in 1..={}, got {k}", data.len()));
    }
    if k == 1 {
        return Ok(vec![Split {
            train: data.clone(),
            test: data.clone(),
        }]);
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in data.labels().into_iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = Rng::new(seed);
    let mut fold_of = vec![0; data.len()];
    let mut next = 0;
    for idx in by_class.values_mut() {
        rng.shuffle(idx);
        for &i in idx.iter() {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| fold_of[i] == f);
            Split {
                train: data.subset(&train),
                test: data.subset(&test),
            }
        })
        .collect())
}

pub fn load_csv(path: &Path, label_column: &str, k: usize, seed: u64) -> Result<Vec<Split>> {
    k_fold(&read_csv(path, label_column)?.data, k, seed)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("bad gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Pixel rows scaled to `[0, 1]` with labels, from IDX image and label
/// files (optionally gzip-compressed).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let fmt = |path: &Path, message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let img = read_maybe_gz(images_path)?;
    if img.len() < 16 || be_u32(&img, 0) != IDX_IMAGES {
        return Err(fmt(images_path, "not an IDX image file (magic 0x00000803)".into()));
    }
    let n = be_u32(&img, 4) as usize;
    let rows = be_u32(&img, 8) as usize;
    let cols = be_u32(&img, 12) as usize;
    let size = rows * cols;
    if img.len() < 16 + n * size {
        return Err(fmt(
            images_path,
            format!(
                "truncated: {n} images need {} bytes, found {}",
                16 + n * size,
                img.len()
            ),
        ));
    }
    let lab = read_maybe_gz(labels_path)?;
    if lab.len() < 8 || be_u32(&lab, 0) != IDX_LABELS {
        return Err(fmt(labels_path, "not an IDX label file (magic 0x00000801)".into()));
    }
    let nl = be_u32(&lab, 4) as usize;
    if nl != n {
        return Err(fmt(labels_path, format!("{nl} labels for {n} images")));
    }
    if lab.len() < 8 + n {
        return Err(fmt(labels_path, "truncated label payload".into()));
    }
    let x = (0..n)
        .map(|i| {
            img[16 + i * size..16 + (i + 1) * size]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect();
    let y = lab[8..8 + n].iter().map(|&b| vec![b as f64]).collect();
    Ok(Dataset { x, y })
}

/// Writes an IDX image file and label file, gzip-compressed when the path
/// ends in `.gz`. Pixel values are taken from `[0, 1]` to bytes.
pub fn write_idx(data: &Dataset, side: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    let n = data.len();
    let mut img = Vec::with_capacity(16 + n * side * side);
    for v in [IDX_IMAGES, n as u32, side as u32, side as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for row in &data.x {
        img.extend(row.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(data.y.iter().map(|r| r[0] as u8));
    for (path, bytes) in [(images_path, img), (labels_path, lab)] {
        let file = File::create(path)?;
        if path.extension().is_some_and(|e| e == "gz") {
            let mut enc = flate2::write::GzEncoder::new(file, flate2::Compression::default());
            enc.write_all(&bytes)?;
            enc.finish()?;
        } else {
            BufWriter::new(file).write_all(&bytes)?;
        }
    }
    Ok(())
}

/// Average-pools square `side x side` images by `factor`.
pub fn downsample(data: &Dataset, side: usize, factor: usize) -> Result<Dataset> {
    if factor == 0 || side % factor != 0 {
        return config(format!("factor {factor} must divide image side {side}"));
    }
    if data.in_dim() != side * side {
        return shape(format!("rows have {} pixels, expected {}", data.in_dim(), side * side));
    }
    let out_side = side / factor;
    let norm = (factor * factor) as f64;
    let x = data
        .x
        .iter()
        .map(|img| {
            let mut out = vec![0.0; out_side * out_side];
            for r in 0..side {
                for c in 0..side {
                    out[(r / factor) * out_side + c / factor] += img[r * side + c];
                }
            }
            out.iter_mut().for_each(|v| *v /= norm);
            out
        })
        .collect();
    Ok(Dataset { x, y: data.y.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormalizerSpec {
    None {},
    /// Fixed `(x - mean) / std` when both are given, else per-feature
    /// statistics of the training split.
    MeanStd {
        #[serde(default)]
        mean: Option<f64>,
        #[serde(default)]
        std: Option<f64>,
    },
    /// Per-feature rescaling of the training range onto `[0, 1]`.
    MinMax {},
}

/// Affine per-feature map `(x - shift) / scale`.
impl Default for NormalizerSpec {
    fn default() -> Self {
        NormalizerSpec::None {}
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit(spec: &NormalizerSpec, train: &Dataset) -> Self {
        let m = train.in_dim();
        let n = train.len().max(1) as f64;
        let (shift, scale) = match spec {
            NormalizerSpec::None {} => (vec![0.0; m], vec![1.0; m]),
            NormalizerSpec::MeanStd {
                mean: Some(mu),
                std: Some(sd),
            } => (vec![*mu; m], vec![*sd; m]),
            NormalizerSpec::MeanStd { .. } => {
                let mean: Vec<f64> = (0..m).map(|j| train.x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
                let sd = (0..m)
                    .map(|j| (train.x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
                    .collect();
                (mean, sd)
            }
            NormalizerSpec::MinMax {} => {
                let lo: Vec<f64> = (0..m)
                    .map(|j| train.x.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min))
                    .collect();
                let span = (0..m)
                    .map(|j| train.x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max) - lo[j])
                    .collect();
                (lo, span)
            }
        };
        let scale = scale
            .into_iter()
            .map(|s: f64| if s > 0.0 && s.is_finite() { s } else { 1.0 })
            .collect();
        Self { shift, scale }
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, k))| (v - s) / k)
            .collect()
    }

    pub fn inverse_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, k))| v * k + s)
            .collect()
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        Dataset {
            x: data.x.iter().map(|r| self.transform_row(r)).collect(),
            y: data.y.clone(),
        }
    }

    /// Fits on `split.train` and applies to both halves.
    pub fn apply(spec: &NormalizerSpec, split: &Split) -> Split {
        let norm = Self::fit(spec, &split.train);
        Split {
            train: norm.transform(&split.train),
            test: norm.transform(&split.test),
        }
    }
}
