//! Federated data partitions: IID, label skew, quantity skew and intent skew.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::Dataset;
use crate::error::{FoltrError, Result};
use crate::scalar::Scalar;

/// A query together with the subset of its candidate documents a client may
/// see. `docs` holds ascending positions into the query's candidate list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryView {
    pub query: usize,
    pub docs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SamplingDomain {
    /// Uniform over every training query, all candidates visible.
    AllTrain,
    /// Uniform over an explicit list of query views.
    Views(Vec<QueryView>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPlan {
    pub domain: SamplingDomain,
    /// Per-round interaction count override (quantity skew).
    pub queries_per_round: Option<usize>,
    /// Intent column of the relabel table this client clicks against.
    pub intent: Option<usize>,
}

impl ClientPlan {
    pub fn iid() -> Self {
        Self {
            domain: SamplingDomain::AllTrain,
            queries_per_round: None,
            intent: None,
        }
    }

    /// Draws one query uniformly from the client's domain.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, num_train: usize, rng: &mut R) -> (usize, DocSelection<'a>) {
        match &self.domain {
            SamplingDomain::AllTrain => (rng.random_range(0..num_train), DocSelection::All),
            SamplingDomain::Views(views) => {
                let v = &views[rng.random_range(0..views.len())];
                (v.query, DocSelection::Subset(&v.docs))
            }
        }
    }

    pub fn is_empty(&self, num_train: usize) -> bool {
        match &self.domain {
            SamplingDomain::AllTrain => num_train == 0,
            SamplingDomain::Views(v) => v.is_empty() || v.iter().any(|view| view.docs.is_empty()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DocSelection<'a> {
    All,
    Subset(&'a [usize]),
}

impl DocSelection<'_> {
    pub fn resolve(&self, num_docs: usize) -> Vec<usize> {
        match self {
            DocSelection::All => (0..num_docs).collect(),
            DocSelection::Subset(s) => s.to_vec(),
        }
    }
}

/// Per-query, per-intent relevance overrides: `grades[query][intent][doc]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentRelabelTable {
    pub num_intents: usize,
    pub grades: Vec<Vec<Vec<u8>>>,
}

impl IntentRelabelTable {
    pub fn grade(&self, query: usize, intent: usize, doc: usize) -> u8 {
        self.grades[query][intent][doc]
    }

    pub fn validate<S>(&self, dataset: &Dataset<S>) -> Result<()> {
        if self.grades.len() != dataset.train.len() {
            return Err(FoltrError::Schema(format!(
                "relabel table covers {} queries, dataset has {}",
                self.grades.len(),
                dataset.train.len()
            )));
        }
        for (qi, per_intent) in self.grades.iter().enumerate() {
            if per_intent.len() != self.num_intents {
                return Err(FoltrError::Schema(format!(
                    "query {qi} has {} intents, expected {}",
                    per_intent.len(),
                    self.num_intents
                )));
            }
            let n = dataset.train[qi].docs.len();
            if per_intent.iter().any(|labels| labels.len() != n) {
                return Err(FoltrError::Schema(format!("query {qi}: intent labels must cover all {n} documents")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub clients: Vec<ClientPlan>,
    pub relabel: Option<IntentRelabelTable>,
}

impl PartitionPlan {
    pub fn iid(num_clients: usize) -> Result<Self> {
        if num_clients == 0 {
            return Err(FoltrError::Config("num_clients must be at least 1".into()));
        }
        Ok(Self {
            clients: vec![ClientPlan::iid(); num_clients],
            relabel: None,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Checks the plan against a dataset: every client has a non-empty
    /// domain and every referenced query/document exists.
    pub fn validate<S>(&self, dataset: &Dataset<S>) -> Result<()> {
        if self.clients.is_empty() {
            return Err(FoltrError::Config("partition has no clients".into()));
        }
        let n_train = dataset.train.len();
        for (id, c) in self.clients.iter().enumerate() {
            if c.is_empty(n_train) {
                return Err(FoltrError::Config(format!("client {id} has an empty sampling domain")));
            }
            if let SamplingDomain::Views(views) = &c.domain {
                for v in views {
                    let q = dataset.train.get(v.query).ok_or_else(|| {
                        FoltrError::Config(format!("client {id} references missing query {}", v.query))
                    })?;
                    if v.docs.iter().any(|&d| d >= q.docs.len()) {
                        return Err(FoltrError::Config(format!(
                            "client {id} references a missing document of query {}",
                            v.query
                        )));
                    }
                }
            }
            if c.queries_per_round == Some(0) {
                return Err(FoltrError::Config(format!("client {id} issues zero queries per round")));
            }
            if let Some(intent) = c.intent {
                let table = self
                    .relabel
                    .as_ref()
                    .ok_or_else(|| FoltrError::Config(format!("client {id} has an intent but no relabel table")))?;
                if intent >= table.num_intents {
                    return Err(FoltrError::Config(format!("client {id} uses unknown intent {intent}")));
                }
            }
        }
        if let Some(table) = &self.relabel {
            table.validate(dataset)?;
        }
        Ok(())
    }

    /// Appends full views of `shared` queries to every view-restricted
    /// client. Clients already sampling the whole train set are unchanged.
    pub fn with_shared_queries<S>(mut self, dataset: &Dataset<S>, shared: &[usize]) -> Self {
        for c in &mut self.clients {
            if let SamplingDomain::Views(views) = &mut c.domain {
                for &q in shared {
                    views.push(QueryView {
                        query: q,
                        docs: (0..dataset.train[q].docs.len()).collect(),
                    });
                }
            }
        }
        self
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Label-distribution skew. Grade combinations of size `labels_per_client`
/// are enumerated in lexicographic order and client `i` owns combination
/// `i mod #combinations`. Each grade's query-document pairs are shuffled and
/// split equally among its owners; the remainder goes round-robin by
/// client index.
pub fn partition_label_skew<S: Scalar, R: Rng + ?Sized>(
    dataset: &Dataset<S>,
    num_clients: usize,
    labels_per_client: usize,
    rng: &mut R,
) -> Result<PartitionPlan> {
    let grades = dataset.num_grades();
    if labels_per_client == 0 || labels_per_client > grades {
        return Err(FoltrError::Config(format!(
            "labels_per_client must be in 1..={grades}, got {labels_per_client}"
        )));
    }
    let combos = combinations(grades, labels_per_client);
    if num_clients == 0 || !num_clients.is_multiple_of(combos.len()) {
        return Err(FoltrError::Config(format!(
            "{num_clients} clients cannot evenly cover {} grade combinations",
            combos.len()
        )));
    }

    let mut owned: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); num_clients];
    for grade in 0..grades {
        let owners: Vec<usize> = (0..num_clients)
            .filter(|&c| combos[c % combos.len()].contains(&grade))
            .collect();
        let mut pairs: Vec<(usize, usize)> = dataset
            .train
            .iter()
            .enumerate()
            .flat_map(|(qi, q)| {
                q.docs
                    .iter()
                    .filter(move |d| usize::from(d.relevance) == grade)
                    .map(move |d| (qi, d.doc_index))
            })
            .collect();
        pairs.shuffle(rng);
        let base = pairs.len() / owners.len();
        let rem = pairs.len() % owners.len();
        let mut start = 0;
        for (j, &owner) in owners.iter().enumerate() {
            let take = base + usize::from(j < rem);
            for &(q, d) in &pairs[start..start + take] {
                owned[owner].entry(q).or_default().push(d);
            }
            start += take;
        }
    }

    let clients = owned
        .into_iter()
        .map(|by_query| ClientPlan {
            domain: SamplingDomain::Views(
                by_query
                    .into_iter()
                    .map(|(query, mut docs)| {
                        docs.sort_unstable();
                        QueryView { query, docs }
                    })
                    .collect(),
            ),
            queries_per_round: None,
            intent: None,
        })
        .collect();
    let plan = PartitionPlan { clients, relabel: None };
    plan.validate(dataset)?;
    Ok(plan)
}

/// Data-quantity skew: client `i` issues `queries_per_round[i]` uniformly
/// sampled training queries per local round.
pub fn partition_quantity_skew(num_clients: usize, queries_per_round: &[usize]) -> Result<PartitionPlan> {
    if num_clients == 0 || queries_per_round.len() != num_clients {
        return Err(FoltrError::Config(format!(
            "expected {num_clients} per-client query counts, got {}",
            queries_per_round.len()
        )));
    }
    if let Some(i) = queries_per_round.iter().position(|&q| q == 0) {
        return Err(FoltrError::Config(format!("client {i} has a zero query count")));
    }
    Ok(PartitionPlan {
        clients: queries_per_round
            .iter()
            .map(|&q| ClientPlan {
                queries_per_round: Some(q),
                ..ClientPlan::iid()
            })
            .collect(),
        relabel: None,
    })
}

/// Fraction of each query's candidates marked relevant per synthetic intent.
pub const INTENT_RELEVANT_FRACTION: f64 = 0.1;

/// Synthetic intent skew: for every training query each intent marks a
/// disjoint random 10% of its documents relevant (top grade, others 0).
/// Client `i` clicks against intent `i`.
pub fn partition_intent_skew<S: Scalar, R: Rng + ?Sized>(
    dataset: &Dataset<S>,
    num_intents: usize,
    rng: &mut R,
) -> Result<(PartitionPlan, IntentRelabelTable)> {
    if num_intents == 0 {
        return Err(FoltrError::Config("num_intents must be at least 1".into()));
    }
    let mut grades = Vec::with_capacity(dataset.train.len());
    for q in &dataset.train {
        let n = q.docs.len();
        let per_intent = ((n as f64 * INTENT_RELEVANT_FRACTION).round() as usize).max(1);
        if num_intents * per_intent > n {
            return Err(FoltrError::Config(format!(
                "query {} has {n} documents, too few for {num_intents} disjoint intents",
                q.query_id
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let per_query = (0..num_intents)
            .map(|i| {
                let mut labels = vec![0u8; n];
                for &d in &order[i * per_intent..(i + 1) * per_intent] {
                    labels[d] = dataset.max_grade;
                }
                labels
            })
            .collect();
        grades.push(per_query);
    }
    let table = IntentRelabelTable { num_intents, grades };
    let plan = PartitionPlan {
        clients: (0..num_intents)
            .map(|i| ClientPlan {
                intent: Some(i),
                ..ClientPlan::iid()
            })
            .collect(),
        relabel: Some(table.clone()),
    };
    plan.validate(dataset)?;
    Ok((plan, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_linear, SyntheticSpec};
    use crate::seed::stream;
    use std::collections::{BTreeSet, HashSet};

    fn corpus() -> Dataset<f64> {
        synthetic_linear(&SyntheticSpec::default(), 11)
    }

    fn client_grades(plan: &PartitionPlan, ds: &Dataset<f64>, c: usize) -> BTreeSet<u8> {
        match &plan.clients[c].domain {
            SamplingDomain::Views(views) => views
                .iter()
                .flat_map(|v| v.docs.iter().map(|&d| ds.train[v.query].docs[d].relevance))
                .collect(),
            SamplingDomain::AllTrain => unreachable!(),
        }
    }

    #[test]
    fn label_skew_single_grade_per_client() {
        let ds = corpus();
        let plan = partition_label_skew(&ds, 5, 1, &mut stream(1, &[])).unwrap();
        for c in 0..5 {
            let g = client_grades(&plan, &ds, c);
            assert_eq!(g.len(), 1);
            assert_eq!(g.into_iter().next(), Some(c as u8));
        }
    }

    #[test]
    fn label_skew_ten_clients_two_owners_per_grade() {
        let ds = corpus();
        let plan = partition_label_skew(&ds, 10, 1, &mut stream(2, &[])).unwrap();
        for grade in 0..5u8 {
            let owners: Vec<usize> = (0..10)
                .filter(|&c| client_grades(&plan, &ds, c).contains(&grade))
                .collect();
            assert_eq!(owners.len(), 2, "grade {grade}");
        }
    }

    #[test]
    fn label_skew_union_is_exact() {
        let ds = corpus();
        for (clients, k) in [(5, 1), (10, 1), (10, 2)] {
            let plan = partition_label_skew(&ds, clients, k, &mut stream(3, &[])).unwrap();
            let mut seen = HashSet::new();
            let mut count = 0;
            for c in &plan.clients {
                if let SamplingDomain::Views(views) = &c.domain {
                    for v in views {
                        for &d in &v.docs {
                            assert!(seen.insert((v.query, d)), "pair owned twice");
                            count += 1;
                        }
                    }
                }
            }
            let total: usize = ds.train.iter().map(|q| q.docs.len()).sum();
            assert_eq!(count, total);
        }
    }

    #[test]
    fn label_skew_all_grades_single_client_covers_everything() {
        let ds = corpus();
        let plan = partition_label_skew(&ds, 1, 5, &mut stream(4, &[])).unwrap();
        let SamplingDomain::Views(views) = &plan.clients[0].domain else {
            panic!("expected views")
        };
        assert_eq!(views.len(), ds.train.len());
        for (i, v) in views.iter().enumerate() {
            assert_eq!(v.query, i);
            assert_eq!(v.docs, (0..ds.train[i].docs.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn label_skew_rejects_bad_configs() {
        let ds = corpus();
        assert!(partition_label_skew(&ds, 5, 6, &mut stream(0, &[])).is_err());
        assert!(partition_label_skew(&ds, 7, 1, &mut stream(0, &[])).is_err());
        assert!(partition_label_skew(&ds, 5, 0, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn quantity_skew_counts() {
        let plan = partition_quantity_skew(5, &[1, 3, 5, 7, 9]).unwrap();
        let counts: Vec<_> = plan.clients.iter().map(|c| c.queries_per_round).collect();
        assert_eq!(counts, vec![Some(1), Some(3), Some(5), Some(7), Some(9)]);
        assert!(partition_quantity_skew(2, &[1, 0]).is_err());
        assert!(partition_quantity_skew(2, &[1]).is_err());
        assert_eq!(partition_quantity_skew(1, &[1]).unwrap().num_clients(), 1);
    }

    #[test]
    fn intent_skew_columns_are_disjoint() {
        let ds = corpus();
        let (plan, table) = partition_intent_skew(&ds, 4, &mut stream(5, &[])).unwrap();
        assert_eq!(plan.num_clients(), 4);
        for (c, cp) in plan.clients.iter().enumerate() {
            assert_eq!(cp.intent, Some(c));
        }
        for per_query in &table.grades {
            let n = per_query[0].len();
            for d in 0..n {
                let relevant = per_query.iter().filter(|l| l[d] > 0).count();
                assert!(relevant <= 1);
            }
            for labels in per_query {
                assert_eq!(labels.iter().filter(|&&g| g > 0).count(), 2);
            }
        }
    }

    #[test]
    fn intent_skew_rejects_too_many_intents() {
        let ds = corpus();
        assert!(partition_intent_skew(&ds, 11, &mut stream(6, &[])).is_err());
        assert!(partition_intent_skew(&ds, 0, &mut stream(6, &[])).is_err());
        assert!(partition_intent_skew(&ds, 1, &mut stream(6, &[])).is_ok());
    }
}
