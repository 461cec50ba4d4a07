//! Shared fixtures for integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use pqballot::biometric::{CaptureSample, EmbeddingProvider, SyntheticProvider};
use pqballot::ledger::{Clock, ManualClock, MemoryBlockStore, PersonalInfo};
use pqballot::protocol::{EnrollmentReceipt, Node, NodeOptions, NodeStores};
use pqballot::registry::MemoryTemplateStore;
use pqballot::sigscheme::{generate_keypair, KeyPair, Profile};

pub const START_MS: u64 = 1_760_000_000_000;
pub const CANDIDATES: [(u32, &str); 3] = [(1, "Alpha"), (2, "Beta"), (3, "Gamma")];

pub fn authority() -> KeyPair {
    generate_keypair(Profile::F512, Some([42; 32])).unwrap()
}

/// Distinct citizen `i` with a nominal-sized record.
pub fn personal(i: u64) -> PersonalInfo {
    PersonalInfo {
        full_name: format!("Citizen {i:06}"),
        phone: format!("98{i:08}"),
        date_of_birth: "1990-04-12".into(),
        citizenship_number: format!("CIT-{i:08}"),
        address: format!("Ward {}, Kathmandu", i % 32),
    }
}

/// Probe captures at noise 0.05 per coordinate.
pub fn provider() -> SyntheticProvider {
    SyntheticProvider::new(7, 0.05)
}

/// A node over shared in-memory stores; reopening sees the same data.
pub struct Harness {
    pub authority: KeyPair,
    pub blocks: MemoryBlockStore,
    pub templates: MemoryTemplateStore,
    pub clock: Arc<ManualClock>,
    pub options: NodeOptions,
    pub node: Arc<Node>,
}

impl Harness {
    pub fn new() -> Harness {
        Self::with_options(NodeOptions::default())
    }

    pub fn with_options(options: NodeOptions) -> Harness {
        let authority = authority();
        let blocks = MemoryBlockStore::new();
        let templates = MemoryTemplateStore::new();
        let clock = Arc::new(ManualClock::new(START_MS));
        let node = open(&authority, &blocks, &templates, &clock, &options);
        for (id, name) in CANDIDATES {
            node.add_candidate(id, name).unwrap();
        }
        node.open_election().unwrap();
        Harness { authority, blocks, templates, clock, options, node: Arc::new(node) }
    }

    /// A second node recovered from the same stores.
    pub fn reopen(&self) -> Node {
        open(&self.authority, &self.blocks, &self.templates, &self.clock, &self.options)
    }

    /// An independent copy of the current stores, opened as a new node.
    pub fn fork(&self) -> Harness {
        let blocks = MemoryBlockStore::with_records(self.blocks.records());
        let templates = MemoryTemplateStore::with_records(self.templates.records());
        let clock = Arc::new(ManualClock::new(self.clock.now_ms()));
        let node = open(&self.authority, &blocks, &templates, &clock, &self.options);
        Harness { authority: self.authority.clone(), blocks, templates, clock, options: self.options.clone(), node: Arc::new(node) }
    }

    pub fn sample(&self, subject: u64, attempt: u64) -> CaptureSample {
        provider().capture(subject, attempt).unwrap()
    }

    /// Noise-free capture, stored as the template.
    pub fn enrollment(&self, subject: u64) -> CaptureSample {
        provider().enrollment(subject).unwrap()
    }

    pub fn enroll(&self, subject: u64) -> EnrollmentReceipt {
        self.node.enroll(personal(subject), self.enrollment(subject)).unwrap()
    }
}

pub fn open(
    authority: &KeyPair,
    blocks: &MemoryBlockStore,
    templates: &MemoryTemplateStore,
    clock: &Arc<ManualClock>,
    options: &NodeOptions,
) -> Node {
    let stores = NodeStores { blocks: Box::new(blocks.clone()), templates: Box::new(templates.clone()) };
    Node::open(KeyPair::from_secret(authority.secret().clone()), stores, clock.clone(), options.clone()).unwrap()
}
