//! The sequential logit-passing protocol.
//!
//! Agents are visited in the graph's topological order. Each one fits a
//! logistic model on its local feature columns followed by the logit columns
//! of its parents, then publishes `z_i = w_i . x_{S_i} + sum_j v_ij z_j` for
//! its children. Unconverged fits are kept and flagged; they do not stop the
//! run.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::AgentGraph;
use crate::solver::{fit_logistic, FitOptions, FitResult, FitStatus};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentModel {
    pub id: usize,
    pub features: Vec<usize>,
    pub parents: Vec<usize>,
    /// Weights on local features, in ascending feature order.
    pub w: Vec<f64>,
    /// Weights on parent logits, in declared parent order.
    pub v: Vec<f64>,
    pub intercept: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: FitStatus,
}

impl AgentModel {
    fn from_fit(id: usize, features: &[usize], parents: &[usize], fit: FitResult) -> Self {
        let mut w = fit.weights;
        let v = w.split_off(features.len());
        Self {
            id,
            features: features.to_vec(),
            parents: parents.to_vec(),
            w,
            v,
            intercept: fit.intercept,
            loss: fit.loss,
            grad_norm: fit.grad_norm,
            iterations: fit.iterations,
            converged: fit.converged,
            status: fit.status,
        }
    }

    /// Weights over the agent's design columns (`w` then `v`).
    pub fn weights(&self) -> Vec<f64> {
        self.w.iter().chain(&self.v).copied().collect()
    }

    pub fn l1_weight_norm(&self) -> f64 {
        self.w.iter().chain(&self.v).map(|x| x.abs()).sum::<f64>() + self.intercept.abs()
    }
}

/// Everything the protocol produced, indexed by agent id.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolTrace {
    order: Vec<usize>,
    sinks: Vec<usize>,
    models: Vec<Option<AgentModel>>,
    logits: Vec<Option<Vec<f64>>>,
}

impl ProtocolTrace {
    /// A trace with no agent fitted yet.
    pub fn empty(graph: &AgentGraph) -> Self {
        let n = graph.num_agents();
        Self {
            order: graph.topo_order().to_vec(),
            sinks: graph.sinks(),
            models: vec![None; n],
            logits: vec![None; n],
        }
    }

    pub fn insert(&mut self, model: AgentModel, logits: Vec<f64>) {
        let slot = model.id - 1;
        self.models[slot] = Some(model);
        self.logits[slot] = Some(logits);
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn sinks(&self) -> &[usize] {
        &self.sinks
    }

    /// Last agent in topological order.
    pub fn final_agent(&self) -> usize {
        *self.order.last().expect("graph has at least one agent")
    }

    pub fn model(&self, agent: usize) -> Option<&AgentModel> {
        self.models.get(agent - 1).and_then(Option::as_ref)
    }

    pub fn logits(&self, agent: usize) -> Option<&[f64]> {
        self.logits.get(agent - 1).and_then(|z| z.as_deref())
    }

    pub fn loss(&self, agent: usize) -> Option<f64> {
        self.model(agent).map(|m| m.loss)
    }

    /// Fitted models in topological order.
    pub fn models(&self) -> impl Iterator<Item = &AgentModel> {
        self.order.iter().filter_map(|&a| self.model(a))
    }

    /// Losses in topological order.
    pub fn losses(&self) -> Vec<f64> {
        self.models().map(|m| m.loss).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.models().all(|m| m.converged)
    }

    pub fn is_complete(&self) -> bool {
        self.models.iter().all(Option::is_some)
    }

    /// Largest `L(child) - L(parent)` over all edges, `None` without edges.
    pub fn max_edge_increase(&self, graph: &AgentGraph) -> Option<f64> {
        graph
            .edges()
            .into_iter()
            .filter_map(|(p, c)| Some(self.loss(c)? - self.loss(p)?))
            .reduce(f64::max)
    }

    /// Per-agent CSV: `agent_id, topo_pos, loss, grad_norm, converged,
    /// l1_weight_norm`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "agent_id",
            "topo_pos",
            "loss",
            "grad_norm",
            "converged",
            "l1_weight_norm",
        ])?;
        for (pos, m) in self.models().enumerate() {
            w.write_record([
                m.id.to_string(),
                (pos + 1).to_string(),
                format!("{:e}", m.loss),
                format!("{:e}", m.grad_norm),
                m.converged.to_string(),
                format!("{:e}", m.l1_weight_norm()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Flat dump of all logit columns: little-endian `u64 n`, `u64 D`, then
    /// `n * D` little-endian `f64` values row by row, agents in topological
    /// order within a row.
    pub fn write_logits<W: Write>(&self, mut out: W) -> Result<()> {
        let cols: Vec<&[f64]> = self
            .order
            .iter()
            .map(|&a| self.logits(a).ok_or(Error::MissingParent { agent: a, parent: a }))
            .collect::<Result<_>>()?;
        let n = cols.first().map_or(0, |c| c.len());
        out.write_all(&(n as u64).to_le_bytes())?;
        out.write_all(&(cols.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(cols.len() * 8);
        for i in 0..n {
            buf.clear();
            for c in &cols {
                buf.extend_from_slice(&c[i].to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }
}

/// Reads a logit dump back as `(n, D, row-major values)`.
pub fn read_logits<R: Read>(mut input: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let depth = u64::from_le_bytes(word) as usize;
    let mut values = Vec::with_capacity(n * depth);
    for _ in 0..n * depth {
        input.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    Ok((n, depth, values))
}

/// Design matrix for `agent`: its feature columns in ascending index order,
/// then its parents' logit columns in declared order.
pub fn agent_design(
    dataset: &Dataset,
    graph: &AgentGraph,
    agent: usize,
    trace: &ProtocolTrace,
) -> Result<DMatrix<f64>> {
    let features = graph.features(agent);
    let parents = graph.parents(agent);
    let n = dataset.n();
    let mut data = Vec::with_capacity(n * (features.len() + parents.len()));
    for &l in features {
        if l > dataset.d() {
            return Err(Error::IndexOutOfRange {
                what: "feature",
                index: l,
                max: dataset.d(),
            });
        }
        data.extend_from_slice(dataset.feature(l));
    }
    for &p in parents {
        let z = trace
            .logits(p)
            .ok_or(Error::MissingParent { agent, parent: p })?;
        data.extend_from_slice(z);
    }
    Ok(DMatrix::from_vec(n, features.len() + parents.len(), data))
}

/// Runs the protocol over every agent of `graph` in topological order.
pub fn run_protocol(dataset: &Dataset, graph: &AgentGraph, opts: &FitOptions) -> Result<ProtocolTrace> {
    if graph.max_feature() > dataset.d() {
        return Err(Error::InvalidDimension(format!(
            "graph uses feature {} but dataset has d = {}",
            graph.max_feature(),
            dataset.d()
        )));
    }
    let mut trace = ProtocolTrace::empty(graph);
    for &agent in graph.topo_order() {
        let design = agent_design(dataset, graph, agent, &trace)?;
        let fit = fit_logistic(&design, dataset.labels(), opts)?;
        let logits = fit.logits(&design)?;
        let model = AgentModel::from_fit(agent, graph.features(agent), graph.parents(agent), fit);
        trace.insert(model, logits);
    }
    Ok(trace)
}

/// Fits the full-feature comparator on all `d` columns.
pub fn fit_global(dataset: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    fit_logistic(dataset.features(), dataset.labels(), opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkExcess {
    pub sink: usize,
    pub sink_loss: f64,
    pub global_loss: f64,
    pub excess: f64,
    /// Both the sink's and the global fit converged.
    pub converged: bool,
}

/// `L(p_sink) - L(p*)` for one sink.
pub fn excess_for(trace: &ProtocolTrace, sink: usize, global: &FitResult) -> Result<SinkExcess> {
    let model = trace.model(sink).ok_or_else(|| {
        Error::InvalidDimension(format!("agent {sink} has not been fitted"))
    })?;
    Ok(SinkExcess {
        sink,
        sink_loss: model.loss,
        global_loss: global.loss,
        excess: model.loss - global.loss,
        converged: model.converged && global.converged,
    })
}

/// Excess loss of the last agent in topological order.
pub fn sink_excess_loss(trace: &ProtocolTrace, global: &FitResult) -> Result<SinkExcess> {
    excess_for(trace, trace.final_agent(), global)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::cyclic_path_assignment;
    use crate::instance::{generate_hard_instance, HardInstanceSpec};

    fn small_instance() -> Dataset {
        generate_hard_instance(&HardInstanceSpec { k: 3, n: 2000, seed: 5 }).unwrap()
    }

    #[test]
    fn design_columns() {
        let ds = small_instance();
        let g = AgentGraph::build(&[(1, 2)], &[vec![2], vec![1]], 3).unwrap();
        let mut trace = ProtocolTrace::empty(&g);
        let x = agent_design(&ds, &g, 1, &trace).unwrap();
        assert_eq!(x.ncols(), 1);
        assert_eq!(crate::dataset::column(&x, 0), ds.feature(2));

        assert!(matches!(
            agent_design(&ds, &g, 2, &trace),
            Err(Error::MissingParent { agent: 2, parent: 1 })
        ));
        let fake = vec![0.25; ds.n()];
        let model = AgentModel::from_fit(
            1,
            &[2],
            &[],
            fit_logistic(&x, ds.labels(), &FitOptions::default()).unwrap(),
        );
        trace.insert(model, fake.clone());
        let x2 = agent_design(&ds, &g, 2, &trace).unwrap();
        assert_eq!(x2.ncols(), 2);
        assert_eq!(crate::dataset::column(&x2, 0), ds.feature(1));
        assert_eq!(crate::dataset::column(&x2, 1), &fake[..]);
    }

    #[test]
    fn trace_columns_match_weights() {
        let ds = small_instance();
        let g = cyclic_path_assignment(3, 6).unwrap();
        let trace = run_protocol(&ds, &g, &FitOptions::default()).unwrap();
        assert!(trace.is_complete());
        let mut partial = ProtocolTrace::empty(&g);
        for &a in g.topo_order() {
            let design = agent_design(&ds, &g, a, &partial).unwrap();
            let m = trace.model(a).unwrap();
            let z = crate::solver::predict_logits(&m.weights(), &design).unwrap();
            assert_eq!(z.as_slice(), trace.logits(a).unwrap());
            partial.insert(m.clone(), z);
        }
    }

    #[test]
    fn graph_wider_than_dataset_is_rejected() {
        let ds = small_instance();
        let g = AgentGraph::build(&[], &[vec![4]], 4).unwrap();
        assert!(matches!(
            run_protocol(&ds, &g, &FitOptions::default()),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn csv_and_binary_exports() {
        let ds = small_instance();
        let g = cyclic_path_assignment(3, 4).unwrap();
        let trace = run_protocol(&ds, &g, &FitOptions::default()).unwrap();

        let mut csv_bytes = Vec::new();
        trace.write_csv(&mut csv_bytes).unwrap();
        let text = String::from_utf8(csv_bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "agent_id,topo_pos,loss,grad_norm,converged,l1_weight_norm");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("1,1,"));

        let mut bin = Vec::new();
        trace.write_logits(&mut bin).unwrap();
        assert_eq!(bin.len(), 16 + 8 * ds.n() * 4);
        let (n, depth, values) = read_logits(&bin[..]).unwrap();
        assert_eq!((n, depth), (ds.n(), 4));
        assert_eq!(values[3], trace.logits(4).unwrap()[0]);
        assert_eq!(values[4], trace.logits(1).unwrap()[1]);
    }

    #[test]
    fn multi_sink_graph_reports_every_sink() {
        let ds = small_instance();
        let g = AgentGraph::build(&[(1, 2), (1, 3)], &[vec![1], vec![2], vec![3]], 3).unwrap();
        let trace = run_protocol(&ds, &g, &FitOptions::default()).unwrap();
        assert_eq!(trace.sinks(), &[2, 3]);
        let global = fit_global(&ds, &FitOptions::default()).unwrap();
        for &s in trace.sinks() {
            let e = excess_for(&trace, s, &global).unwrap();
            assert!(e.excess >= -1e-9);
        }
        assert_eq!(sink_excess_loss(&trace, &global).unwrap().sink, 3);
    }
}
