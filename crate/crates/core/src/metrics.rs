//! Error and timing metrics over run traces, and their CSV artifacts.
//!
//! All numbers are written in scientific notation with six significant digits.

use std::io;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::powerflow::InjectionVector;
use crate::scenario::{EstimateRecord, RunTrace, TraceRow};

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorMetrics {
    pub name: String,
    pub avg_step_time_s: f64,
    pub median_step_time_s: f64,
    /// Mean over time and nodes of `|v̂ − v|`.
    pub avg_error_per_node_pu: f64,
    /// Mean over time of the largest node error.
    pub avg_max_error_per_sample_pu: f64,
    /// Mean node error of each sample.
    pub error_per_sample: Vec<f64>,
    /// Cumulative mean of `error_per_sample`.
    pub running_avg_error: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsSummary {
    pub times: Vec<u64>,
    pub estimators: Vec<EstimatorMetrics>,
}

impl MetricsSummary {
    pub fn get(&self, name: &str) -> Option<&EstimatorMetrics> {
        self.estimators.iter().find(|m| m.name == name)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn summarize(trace: &RunTrace) -> Result<MetricsSummary> {
    if trace.rows.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty trace".into()));
    }
    let count = trace.rows.len() as f64;
    let mut estimators = Vec::with_capacity(trace.estimators.len());
    for (k, name) in trace.estimators.iter().enumerate() {
        let mut per_sample = Vec::with_capacity(trace.rows.len());
        let mut max_sum = 0.0;
        let mut times = Vec::with_capacity(trace.rows.len());
        for row in &trace.rows {
            let est = row.estimates.get(k).ok_or(Error::Dimension {
                context: "trace row estimates",
                expected: trace.estimators.len(),
                got: row.estimates.len(),
            })?;
            if est.v_mag.len() != row.v_true.len() || row.v_true.is_empty() {
                return Err(Error::Dimension {
                    context: "estimated vs true voltages",
                    expected: row.v_true.len(),
                    got: est.v_mag.len(),
                });
            }
            let err = (&est.v_mag - &row.v_true).abs();
            per_sample.push(err.mean());
            max_sum += err.max();
            times.push(est.step_seconds);
        }
        let mut running = Vec::with_capacity(per_sample.len());
        let mut acc = 0.0;
        for (i, e) in per_sample.iter().enumerate() {
            acc += e;
            running.push(acc / (i + 1) as f64);
        }
        estimators.push(EstimatorMetrics {
            name: name.clone(),
            avg_step_time_s: times.iter().sum::<f64>() / count,
            median_step_time_s: median(&mut times),
            avg_error_per_node_pu: per_sample.iter().sum::<f64>() / count,
            avg_max_error_per_sample_pu: max_sum / count,
            error_per_sample: per_sample,
            running_avg_error: running,
        });
    }
    Ok(MetricsSummary {
        times: trace.rows.iter().map(|r| r.t).collect(),
        estimators,
    })
}

fn sci(x: f64) -> String {
    format!("{x:.5e}")
}

/// Columns `t,node,v_true,v_est_<name>…`, one row per time step and node.
pub fn write_trace_csv<W: io::Write>(trace: &RunTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "node".into(), "v_true".into()];
    header.extend(trace.estimators.iter().map(|n| format!("v_est_{n}")));
    w.write_record(&header)?;
    for row in &trace.rows {
        for (i, label) in trace.nodes.iter().enumerate() {
            let mut rec = vec![row.t.to_string(), label.clone(), sci(row.v_true[i])];
            rec.extend(row.estimates.iter().map(|e| sci(e.v_mag[i])));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace CSV back into a [`RunTrace`] holding voltages only
/// (injections are zero, step times 0, `m_t` 0).
pub fn read_trace_csv<R: io::Read>(input: R) -> Result<RunTrace> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let fixed = ["t", "node", "v_true"];
    if header.len() < 3 || header.iter().take(3).ne(fixed.iter().copied()) {
        return Err(Error::Parse("trace header must start with t,node,v_true".into()));
    }
    let estimators: Vec<String> = header
        .iter()
        .skip(3)
        .map(|h| {
            h.strip_prefix("v_est_")
                .map(str::to_string)
                .ok_or_else(|| Error::Parse(format!("unexpected trace column \"{h}\"")))
        })
        .collect::<Result<_>>()?;
    let num = |s: &str, line: u64| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Parse(format!("trace line {line}: \"{s}\": {e}")))
    };

    let mut nodes: Vec<String> = Vec::new();
    // (t, v_true, v_est per estimator) accumulated node by node.
    let mut groups: Vec<(u64, Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k as u64 + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("trace line {line}: wrong field count")));
        }
        let t: u64 = rec[0]
            .parse()
            .map_err(|e| Error::Parse(format!("trace line {line}: bad t: {e}")))?;
        if groups.last().is_none_or(|g| g.0 != t) {
            groups.push((t, Vec::new(), vec![Vec::new(); estimators.len()]));
        }
        if groups.len() == 1 {
            nodes.push(rec[1].to_string());
        }
        let g = groups.last_mut().expect("just pushed");
        let pos = g.1.len();
        if nodes.get(pos).map(String::as_str) != Some(&rec[1]) {
            return Err(Error::Parse(format!(
                "trace line {line}: node order differs between time steps"
            )));
        }
        g.1.push(num(&rec[2], line)?);
        for (e, col) in g.2.iter_mut().enumerate() {
            col.push(num(&rec[3 + e], line)?);
        }
    }
    let n = nodes.len();
    let mut rows = Vec::with_capacity(groups.len());
    for (t, v_true, est) in groups {
        if v_true.len() != n {
            return Err(Error::Parse(format!(
                "trace time step {t} has {} of {n} nodes",
                v_true.len()
            )));
        }
        rows.push(TraceRow {
            t,
            injections: InjectionVector::zeros(n),
            v_true: DVector::from_vec(v_true),
            m_t: 0,
            estimates: est
                .into_iter()
                .map(|v| EstimateRecord {
                    v_mag: DVector::from_vec(v),
                    z: None,
                    step_seconds: 0.0,
                })
                .collect(),
        });
    }
    Ok(RunTrace {
        nodes,
        failures: vec![0; estimators.len()],
        estimators,
        rows,
    })
}

/// Error metrics, one row per estimator. Timing lives in a separate file so
/// that this one is reproducible byte for byte.
pub fn write_summary_csv<W: io::Write>(summary: &MetricsSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "avg_error_per_node_pu", "avg_max_error_per_sample_pu"])?;
    for m in &summary.estimators {
        w.write_record([
            m.name.clone(),
            sci(m.avg_error_per_node_pu),
            sci(m.avg_max_error_per_sample_pu),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv<W: io::Write>(summary: &MetricsSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "avg_step_time_s", "median_step_time_s"])?;
    for m in &summary.estimators {
        w.write_record([m.name.clone(), sci(m.avg_step_time_s), sci(m.median_step_time_s)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t,error_<name>…,running_avg_error_<name>…`.
pub fn write_running_error_csv<W: io::Write>(summary: &MetricsSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(summary.estimators.iter().map(|m| format!("error_{}", m.name)));
    header.extend(
        summary
            .estimators
            .iter()
            .map(|m| format!("running_avg_error_{}", m.name)),
    );
    w.write_record(&header)?;
    for (i, t) in summary.times.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(summary.estimators.iter().map(|m| sci(m.error_per_sample[i])));
        rec.extend(summary.estimators.iter().map(|m| sci(m.running_avg_error[i])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `t,estimator,quantity,node,value` for every logged state entry.
pub fn write_states_csv<W: io::Write>(trace: &RunTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "estimator", "quantity", "node", "value"])?;
    let n = trace.nodes.len();
    for row in &trace.rows {
        for (name, est) in trace.estimators.iter().zip(&row.estimates) {
            let Some(z) = &est.z else { continue };
            for (k, value) in z.iter().enumerate() {
                let (quantity, node) = if k < n { ("p", k) } else { ("q", k - n) };
                w.write_record([
                    row.t.to_string(),
                    name.clone(),
                    quantity.into(),
                    trace.nodes[node].clone(),
                    sci(*value),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
