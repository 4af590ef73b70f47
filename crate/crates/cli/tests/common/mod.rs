#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn maskseed(args: &[&str]) -> Run {
    maskseed_env(args, &[])
}

pub fn maskseed_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_maskseed"));
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("spawn maskseed");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn ok(args: &[&str]) -> Run {
    let r = maskseed(args);
    assert_eq!(r.code, 0, "maskseed {args:?} failed:\n{}", r.stderr);
    r
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

pub fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).expect("read json")).expect("parse json")
}

/// Foreground intervals `[start, end)` of row-major alternating run lengths.
fn intervals(counts: &[Value], n: usize) -> Vec<(usize, usize)> {
    let mut pos = 0;
    let mut out = Vec::new();
    for (k, c) in counts.iter().enumerate() {
        let len = c.as_u64().unwrap() as usize;
        if k % 2 == 1 && len > 0 {
            out.push((pos, pos + len));
        }
        pos += len;
    }
    assert_eq!(pos, n, "run lengths do not cover the image");
    out
}

fn area(iv: &[(usize, usize)]) -> usize {
    iv.iter().map(|(a, b)| b - a).sum()
}

fn overlap(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let (mut i, mut j, mut total) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

fn iou(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let i = overlap(a, b);
    let u = area(a) + area(b) - i;
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

/// Per-budget AR recomputed straight from the two JSON files: greedy matching by
/// IoU, proposal rank and gt id, thresholds 0.50..0.95.
pub fn reference_ar(annotations: &Path, proposals: &Path, budgets: &[usize]) -> Vec<f64> {
    reference_best(annotations, proposals, budgets)
        .iter()
        .map(|ious| {
            let mut total = 0.0;
            for k in 0..10 {
                let t = (50 + 5 * k) as f64 / 100.0;
                total += ious.iter().filter(|&&v| v >= t).count() as f64 / ious.len() as f64;
            }
            total / 10.0
        })
        .collect()
}

/// Per budget, every ground truth's matched IoU in file order.
pub fn reference_best(annotations: &Path, proposals: &Path, budgets: &[usize]) -> Vec<Vec<f64>> {
    let ann = read_json(annotations);
    let props = read_json(proposals);
    let mut by_image: HashMap<u64, Vec<(f64, usize, &Value)>> = HashMap::new();
    for (i, p) in props.as_array().unwrap().iter().enumerate() {
        by_image
            .entry(p["image_id"].as_u64().unwrap())
            .or_default()
            .push((p["score"].as_f64().unwrap(), i, p));
    }
    let mut out = vec![Vec::new(); budgets.len()];
    for img in ann.as_array().unwrap() {
        let (w, h) = (img["width"].as_u64().unwrap() as usize, img["height"].as_u64().unwrap() as usize);
        let gts: Vec<(u64, Vec<(usize, usize)>)> = img["annotations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| (a["id"].as_u64().unwrap(), intervals(a["rle"].as_array().unwrap(), w * h)))
            .collect();
        let mut ranked = by_image.remove(&img["id"].as_u64().unwrap()).unwrap_or_default();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let masks: Vec<Vec<(usize, usize)>> = ranked
            .iter()
            .map(|(_, _, p)| intervals(p["rle"].as_array().unwrap(), w * h))
            .collect();
        let table: Vec<Vec<f64>> = masks.iter().map(|m| gts.iter().map(|g| iou(m, &g.1)).collect()).collect();
        for (bi, &budget) in budgets.iter().enumerate() {
            let n = budget.min(masks.len());
            let mut used_p = vec![false; n];
            let mut best = vec![0.0; gts.len()];
            let mut used_g = vec![false; gts.len()];
            loop {
                let mut pick: Option<(usize, usize, f64)> = None;
                for p in 0..n {
                    for g in 0..gts.len() {
                        let v = table[p][g];
                        if used_p[p] || used_g[g] || v <= 0.0 {
                            continue;
                        }
                        let better = match pick {
                            None => true,
                            Some((pp, pg, pv)) => v > pv || (v == pv && (p < pp || (p == pp && gts[g].0 < gts[pg].0))),
                        };
                        if better {
                            pick = Some((p, g, v));
                        }
                    }
                }
                let Some((p, g, v)) = pick else { break };
                used_p[p] = true;
                used_g[g] = true;
                best[g] = v;
            }
            out[bi].extend(best);
        }
    }
    out
}

/// Every ground truth's best IoU over all proposals of its image, no matching.
pub fn best_overlap(annotations: &Path, proposals: &Path) -> Vec<f64> {
    let ann = read_json(annotations);
    let props = read_json(proposals);
    let mut by_image: HashMap<u64, Vec<&Value>> = HashMap::new();
    for p in props.as_array().unwrap() {
        by_image.entry(p["image_id"].as_u64().unwrap()).or_default().push(p);
    }
    let mut out = Vec::new();
    for img in ann.as_array().unwrap() {
        let n = (img["width"].as_u64().unwrap() * img["height"].as_u64().unwrap()) as usize;
        let masks: Vec<Vec<(usize, usize)>> = by_image
            .get(&img["id"].as_u64().unwrap())
            .map(|v| v.iter().map(|p| intervals(p["rle"].as_array().unwrap(), n)).collect())
            .unwrap_or_default();
        for a in img["annotations"].as_array().unwrap() {
            let g = intervals(a["rle"].as_array().unwrap(), n);
            out.push(masks.iter().map(|m| iou(m, &g)).fold(0.0, f64::max));
        }
    }
    out
}
