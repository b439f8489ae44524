//! Counting methods behind one trait, selected by name.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    cms_estimate, cms_update, rappor_report, CmsReport, RapporAggregate, RapporConfig, Sketch,
    SketchConfig,
};
use crate::bits::BitVector;
use crate::client::{ClientState, Submission, WireReport};
use crate::cuckoo::CuckooConfig;
use crate::encoding::{EncoderConfig, Value};
use crate::error::{Error, Result};
use crate::ldp::{BucketDictionary, DictionaryMode, MechanismParams, DEFAULT_T_CAP};
use crate::server::{ServerConfig, ServerState};

/// A private counting pipeline seen from the experiment harness: clients
/// produce opaque reports, the aggregator ingests them and answers counts.
pub trait CountingMethod: Send {
    fn name(&self) -> &str;

    /// The report `client` sends for `value`, or `None` if it sends nothing.
    fn report(
        &mut self,
        client: u64,
        value: &Value,
        rng: &mut dyn RngCore,
    ) -> Result<Option<Vec<u8>>>;

    fn ingest(&mut self, report: &[u8]) -> Result<()>;

    fn estimate(&self, value: &Value) -> Result<f64>;

    /// Lookup probes made so far, where the method counts them.
    fn probes(&self) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSettings {
    pub encoder: EncoderConfig,
    pub mechanism: MechanismParams,
    pub table: CuckooConfig,
    pub shards: usize,
    pub t_cap: usize,
    pub dictionary_seed: u64,
    pub rappor: RapporConfig,
    pub cms: SketchConfig,
    /// Prebuilt dictionary to share between method instances.
    #[serde(skip)]
    pub dictionary: Option<Arc<BucketDictionary>>,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            encoder: EncoderConfig::default(),
            mechanism: MechanismParams::default(),
            table: CuckooConfig::default(),
            shards: 1,
            t_cap: DEFAULT_T_CAP,
            dictionary_seed: 0xd1c7_0001,
            rappor: RapporConfig::default(),
            cms: SketchConfig::default(),
            dictionary: None,
        }
    }
}

impl MethodSettings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn server_config(&self) -> ServerConfig {
        ServerConfig {
            shards: self.shards,
            table: self.table.clone(),
            encoder: self.encoder.clone(),
            mech: self.mechanism.clone(),
        }
    }

    /// The shared dictionary, or a freshly sampled one.
    pub fn dictionary(&self) -> Result<Arc<BucketDictionary>> {
        if let Some(d) = &self.dictionary {
            if d.l() == self.mechanism.l && d.bucket_count() == self.mechanism.buckets {
                return Ok(Arc::clone(d));
            }
        }
        BucketDictionary::build(
            self.mechanism.l,
            self.mechanism.buckets,
            self.t_cap,
            self.dictionary_seed,
            DictionaryMode::Sampled,
        )
        .map(Arc::new)
    }
}

/// Bloom filter segments into the sharded cuckoo server.
pub struct PpcfMethod {
    encoder: EncoderConfig,
    mech: MechanismParams,
    dict: Arc<BucketDictionary>,
    clients: HashMap<u64, ClientState>,
    server: ServerState,
}

impl PpcfMethod {
    pub fn new(settings: &MethodSettings) -> Result<Self> {
        let server = ServerState::new(&settings.server_config())?;
        Ok(PpcfMethod {
            encoder: settings.encoder.clone(),
            mech: settings.mechanism.clone(),
            dict: settings.dictionary()?,
            clients: HashMap::new(),
            server,
        })
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }
}

impl CountingMethod for PpcfMethod {
    fn name(&self) -> &str {
        "ppcf"
    }

    fn report(
        &mut self,
        client: u64,
        value: &Value,
        rng: &mut dyn RngCore,
    ) -> Result<Option<Vec<u8>>> {
        let state = match self.clients.entry(client) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(ClientState::new(
                client,
                self.encoder.clone(),
                self.mech.clone(),
                Arc::clone(&self.dict),
            )?),
        };
        Ok(match state.submit(value, rng)? {
            Submission::Report(r) => Some(r.to_bytes()),
            Submission::AlreadyReported => None,
        })
    }

    fn ingest(&mut self, report: &[u8]) -> Result<()> {
        self.server
            .ingest(&WireReport::from_bytes(report)?)
            .map(|_| ())
    }

    fn estimate(&self, value: &Value) -> Result<f64> {
        let r = self.server.query_count(value, self.mech.s_t, self.mech.m)?;
        Ok(r.estimate as f64)
    }

    fn probes(&self) -> Option<u64> {
        Some(self.server.probes())
    }
}

/// Cohort RAPPOR; a client's cohort is its id modulo the cohort count.
pub struct RapporMethod {
    cfg: RapporConfig,
    agg: RapporAggregate,
}

impl RapporMethod {
    pub fn new(settings: &MethodSettings) -> Result<Self> {
        Ok(RapporMethod {
            cfg: settings.rappor.clone(),
            agg: RapporAggregate::new(&settings.rappor)?,
        })
    }
}

impl CountingMethod for RapporMethod {
    fn name(&self) -> &str {
        "rappor"
    }

    fn report(
        &mut self,
        client: u64,
        value: &Value,
        rng: &mut dyn RngCore,
    ) -> Result<Option<Vec<u8>>> {
        let cohort = (client % self.cfg.cohorts as u64) as usize;
        let bits = rappor_report(value, cohort, &self.cfg, rng)?;
        let mut out = (cohort as u32).to_be_bytes().to_vec();
        out.extend_from_slice(&bits.to_bytes());
        Ok(Some(out))
    }

    fn ingest(&mut self, report: &[u8]) -> Result<()> {
        let (head, payload) = report
            .split_at_checked(4)
            .ok_or_else(|| Error::MalformedReport("RAPPOR report too short".into()))?;
        let cohort = u32::from_be_bytes(head.try_into().unwrap()) as usize;
        let bits = BitVector::from_bytes(payload, self.cfg.l)
            .map_err(|e| Error::MalformedReport(e.to_string()))?;
        self.agg.add(cohort, &bits)
    }

    fn estimate(&self, value: &Value) -> Result<f64> {
        Ok(self.agg.estimate(value))
    }
}

/// Privatized count-min sketch.
pub struct CmsMethod {
    cfg: SketchConfig,
    sketch: Sketch,
}

impl CmsMethod {
    pub fn new(settings: &MethodSettings) -> Result<Self> {
        Ok(CmsMethod {
            cfg: settings.cms.clone(),
            sketch: Sketch::new(&settings.cms)?,
        })
    }
}

impl CountingMethod for CmsMethod {
    fn name(&self) -> &str {
        "cms"
    }

    fn report(
        &mut self,
        _client: u64,
        value: &Value,
        rng: &mut dyn RngCore,
    ) -> Result<Option<Vec<u8>>> {
        Ok(Some(cms_update(value, &self.cfg, rng)?.to_bytes()))
    }

    fn ingest(&mut self, report: &[u8]) -> Result<()> {
        self.sketch.add(&CmsReport::from_bytes(report)?)
    }

    fn estimate(&self, value: &Value) -> Result<f64> {
        Ok(cms_estimate(&self.sketch, value))
    }
}

type Factory = Box<dyn Fn(&MethodSettings) -> Result<Box<dyn CountingMethod>> + Send + Sync>;

/// Name to constructor map. [`Default`] registers `ppcf`, `rappor`, `cms`.
pub struct MethodRegistry {
    factories: BTreeMap<String, Factory>,
}

impl MethodRegistry {
    pub fn empty() -> Self {
        MethodRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&MethodSettings) -> Result<Box<dyn CountingMethod>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, settings: &MethodSettings) -> Result<Box<dyn CountingMethod>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))?;
        factory(settings)
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut r = MethodRegistry::empty();
        r.register("ppcf", |s| Ok(Box::new(PpcfMethod::new(s)?)));
        r.register("rappor", |s| Ok(Box::new(RapporMethod::new(s)?)));
        r.register("cms", |s| Ok(Box::new(CmsMethod::new(s)?)));
        r
    }
}
