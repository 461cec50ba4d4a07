mod common;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use pqballot::biometric::SyntheticProvider;
use pqballot::service::api::{AuthenticateRequest, AuthenticateResponse, RegisterRequest, RegisterResponse, VoteRequest, VoteResponse};
use pqballot::service::{launch, CandidateSpec, ConfigLayer, NodeConfig, ServerHandle, StartupError};
use pqballot::sigscheme::keyfile::FileKeyStore;
use pqballot::sigscheme::Profile;
use rand::SeedableRng;
use reqwest::{Client, StatusCode};
use serde_json::Value;

const KEY_SEED: [u8; 32] = [5; 32];
const PASSPHRASE: &str = "correct horse";

fn config(dir: &Path) -> NodeConfig {
    ConfigLayer {
        listen: Some("127.0.0.1:0".into()),
        data_dir: Some(dir.to_path_buf()),
        key_passphrase: Some(PASSPHRASE.into()),
        snapshot_every: Some(4),
        candidates: Some(common::CANDIDATES.iter().map(|&(id, name)| CandidateSpec { id, name: name.into() }).collect()),
        ..Default::default()
    }
    .resolve()
    .unwrap()
}

/// Pre-creates the authority key from a known seed with a cheap KDF.
fn seeded_key(config: &NodeConfig) {
    FileKeyStore::new(&config.authority_key, PASSPHRASE).create(Profile::F512, Some(KEY_SEED), 1_000).unwrap();
}

/// The encoded signing key for `KEY_SEED`, derived straight from the
/// backend rather than through the crate.
fn expected_secret() -> Vec<u8> {
    use fn_dsa::{KeyPairGenerator, KeyPairGeneratorStandard, FN_DSA_LOGN_512};
    let mut rng = rand_chacha::ChaCha20Rng::from_seed(KEY_SEED);
    let mut sk = vec![0u8; fn_dsa::sign_key_size(FN_DSA_LOGN_512)];
    let mut vk = vec![0u8; fn_dsa::vrfy_key_size(FN_DSA_LOGN_512)];
    KeyPairGeneratorStandard::default().keygen(FN_DSA_LOGN_512, &mut rng, &mut sk, &mut vk);
    sk
}

struct Api {
    client: Client,
    base: String,
    provider: SyntheticProvider,
}

impl Api {
    fn new(handle: &ServerHandle) -> Api {
        Api { client: Client::new(), base: format!("http://{}", handle.addr), provider: common::provider() }
    }

    async fn get(&self, path: &str) -> (StatusCode, String) {
        let resp = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (resp.status(), resp.text().await.unwrap())
    }

    async fn get_json(&self, path: &str) -> Value {
        let (status, body) = self.get(path).await;
        assert_eq!(status, StatusCode::OK, "{path}: {body}");
        serde_json::from_str(&body).unwrap()
    }

    async fn post(&self, path: &str, body: &impl serde::Serialize) -> (StatusCode, Value) {
        let resp = self.client.post(format!("{}{path}", self.base)).json(body).send().await.unwrap();
        (resp.status(), resp.json().await.unwrap())
    }

    fn register_request(&self, subject: u64) -> RegisterRequest {
        RegisterRequest {
            personal: common::personal(subject),
            embedding: self.provider.template(subject).into_iter().map(f64::from).collect(),
            spoof_score: 0.05,
        }
    }

    fn authenticate_request(&self, address: &str, subject: u64, spoof_score: f64) -> AuthenticateRequest {
        AuthenticateRequest { address: address.into(), embedding: self.provider.raw_capture(subject, 1), spoof_score }
    }

    async fn register(&self, subject: u64) -> RegisterResponse {
        let (status, body) = self.post("/api/register", &self.register_request(subject)).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        serde_json::from_value(body).unwrap()
    }

    async fn vote(&self, subject: u64, candidate_id: u32) -> VoteResponse {
        let reg = self.register(subject).await;
        let (status, body) = self.post("/api/authenticate", &self.authenticate_request(&reg.address.to_string(), subject, 0.05)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let session: AuthenticateResponse = serde_json::from_value(body).unwrap();
        let (status, body) = self.post("/api/vote", &VoteRequest { session_id: session.session_id, candidate_id }).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        serde_json::from_value(body).unwrap()
    }
}

fn assert_problem(status: StatusCode, body: &Value, expected_status: StatusCode, code: &str) {
    assert_eq!(status, expected_status, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()), "{body}");
    assert!(body.get("detail").is_some(), "{body}");
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn fresh_data_dir_writes_genesis_and_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let handle = launch(config(dir.path())).await.unwrap();
    let api = Api::new(&handle);
    let report = api.get_json("/api/chain/verify").await;
    assert_eq!(report["valid"], true);
    assert_eq!(report["length"], 1);
    let tally: BTreeMap<String, u64> = serde_json::from_value(api.get_json("/api/tally").await).unwrap();
    assert_eq!(tally, BTreeMap::from([("1".into(), 0), ("2".into(), 0), ("3".into(), 0)]));
    let genesis = api.get_json("/api/blocks/0").await;
    assert_eq!(genesis["kind"], "Genesis");
    assert_eq!(genesis["payload"]["candidates"].as_array().unwrap().len(), 3);
    handle.shutdown().await.unwrap();

    let handle = launch(config(dir.path())).await.unwrap();
    assert_eq!(Api::new(&handle).get_json("/api/chain/verify").await["length"], 1);
    handle.shutdown().await.unwrap();

    // a different candidate list does not match the genesis manifest
    let mut other = config(dir.path());
    other.candidates.pop();
    assert!(matches!(launch(other).await, Err(StartupError::CandidateMismatch(_))));

    let mut fresh = config(&dir.path().join("empty"));
    fresh.candidates.clear();
    assert!(matches!(launch(fresh).await, Err(StartupError::NoCandidates)));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn torn_tail_is_truncated_and_corrupt_interior_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let handle = launch(cfg.clone()).await.unwrap();
    let api = Api::new(&handle);
    api.register(1).await;
    api.register(2).await;
    handle.shutdown().await.unwrap();
    let intact = std::fs::read(cfg.ledger_path()).unwrap();

    // a write that died halfway through a record
    let mut f = std::fs::OpenOptions::new().append(true).open(cfg.ledger_path()).unwrap();
    f.write_all(&900u32.to_be_bytes()).unwrap();
    f.write_all(&[0xAB; 37]).unwrap();
    drop(f);
    let handle = launch(cfg.clone()).await.unwrap();
    let api = Api::new(&handle);
    assert_eq!(api.get_json("/api/chain/verify").await["length"], 3);
    handle.shutdown().await.unwrap();
    assert_eq!(std::fs::read(cfg.ledger_path()).unwrap(), intact);

    // one flipped byte inside the first registration block
    let genesis_len = u32::from_be_bytes(intact[..4].try_into().unwrap()) as usize;
    let mut tampered = intact.clone();
    tampered[4 + genesis_len + 4 + 120] ^= 0x01;
    std::fs::write(cfg.ledger_path(), &tampered).unwrap();
    match launch(cfg.clone()).await {
        Err(StartupError::CorruptChain { first_bad_index, .. }) => assert_eq!(first_bad_index, 1),
        Err(e) => panic!("unexpected startup error: {e}"),
        Ok(_) => panic!("node started on a tampered ledger"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_registrations_get_distinct_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let handle = launch(config(dir.path())).await.unwrap();
    let api = std::sync::Arc::new(Api::new(&handle));
    let tasks: Vec<_> = (1..=20)
        .map(|subject| {
            let api = api.clone();
            tokio::spawn(async move { api.register(subject).await })
        })
        .collect();
    let mut indices = HashSet::new();
    let mut addresses = HashSet::new();
    for t in tasks {
        let r = t.await.unwrap();
        assert!(indices.insert(r.block_index));
        assert!(addresses.insert(r.address));
    }
    assert_eq!(indices, (1..=20).collect());
    let report = api.get_json("/api/chain/verify").await;
    assert_eq!(report["valid"], true);
    assert_eq!(report["length"], 21);
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn metrics_track_protocol_activity() {
    let dir = tempfile::tempdir().unwrap();
    let handle = launch(config(dir.path())).await.unwrap();
    let api = Api::new(&handle);
    for (subject, candidate) in [(1, 1), (2, 2), (3, 1)] {
        api.vote(subject, candidate).await;
    }
    // one spoofed and one mismatched authentication
    let reg = api.register(4).await;
    let (status, _) = api.post("/api/authenticate", &api.authenticate_request(&reg.address.to_string(), 4, 0.9)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = api.post("/api/authenticate", &api.authenticate_request(&reg.address.to_string(), 50, 0.05)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let (status, text) = api.get("/metrics").await;
    assert_eq!(status, StatusCode::OK);
    let scrape = prometheus_parse::Scrape::parse(text.lines().map(|l| Ok(l.to_string()))).unwrap();
    let counter = |name: &str| {
        scrape
            .samples
            .iter()
            .find(|s| s.metric == name)
            .map(|s| match s.value {
                prometheus_parse::Value::Counter(v) | prometheus_parse::Value::Untyped(v) => v,
                ref other => panic!("{name} is {other:?}"),
            })
            .unwrap_or_else(|| panic!("{name} missing"))
    };
    assert_eq!(counter("votes_total"), 3.0);
    assert_eq!(counter("registrations_total"), 4.0);
    assert_eq!(counter("spoof_rejections_total"), 1.0);
    assert_eq!(counter("auth_failures_total"), 1.0);
    let histogram_count = |name: &str| match &scrape.samples.iter().find(|s| s.metric == name).unwrap().value {
        prometheus_parse::Value::Histogram(buckets) => buckets.last().unwrap().count,
        other => panic!("{name} is {other:?}"),
    };
    assert_eq!(histogram_count("sign_latency_ms"), 4.0);
    assert_eq!(histogram_count("verify_latency_ms"), 4.0);
    assert_eq!(histogram_count("match_latency_ms"), 4.0);
    assert!(histogram_count("request_latency_ms") >= 12.0);
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn errors_are_problem_documents() {
    let dir = tempfile::tempdir().unwrap();
    let handle = launch(config(dir.path())).await.unwrap();
    let api = Api::new(&handle);
    let reg = api.register(1).await;
    let address = reg.address.to_string();

    let (s, b) = api.post("/api/register", &api.register_request(1)).await;
    assert_problem(s, &b, StatusCode::CONFLICT, "ALREADY_REGISTERED");
    let mut spoofed = api.register_request(2);
    spoofed.spoof_score = 0.5;
    let (s, b) = api.post("/api/register", &spoofed).await;
    assert_problem(s, &b, StatusCode::UNPROCESSABLE_ENTITY, "SPOOF_DETECTED");
    let mut short = api.register_request(3);
    short.embedding.truncate(100);
    let (s, b) = api.post("/api/register", &short).await;
    assert_problem(s, &b, StatusCode::BAD_REQUEST, "INVALID_INPUT");
    let (s, b) = api.post("/api/register", &serde_json::json!({ "personal": 7 })).await;
    assert_problem(s, &b, StatusCode::BAD_REQUEST, "INVALID_INPUT");

    let (s, b) = api.post("/api/authenticate", &api.authenticate_request(&address, 1, 0.7)).await;
    assert_problem(s, &b, StatusCode::UNAUTHORIZED, "SPOOF_DETECTED");
    let (s, b) = api.post("/api/authenticate", &api.authenticate_request(&address, 9, 0.05)).await;
    assert_problem(s, &b, StatusCode::UNAUTHORIZED, "NO_MATCH");
    let (s, b) = api.post("/api/authenticate", &api.authenticate_request(&"ab".repeat(20), 1, 0.05)).await;
    assert_problem(s, &b, StatusCode::UNAUTHORIZED, "UNKNOWN_VOTER");
    let (s, b) = api.post("/api/authenticate", &api.authenticate_request("not-hex", 1, 0.05)).await;
    assert_problem(s, &b, StatusCode::BAD_REQUEST, "INVALID_INPUT");

    let (s, b) = api.post("/api/authenticate", &api.authenticate_request(&address, 1, 0.05)).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    let session: AuthenticateResponse = serde_json::from_value(b).unwrap();
    let (s, b) = api.post("/api/vote", &VoteRequest { session_id: session.session_id.clone(), candidate_id: 42 }).await;
    assert_problem(s, &b, StatusCode::NOT_FOUND, "UNKNOWN_CANDIDATE");
    let (s, _) = api.post("/api/vote", &VoteRequest { session_id: session.session_id.clone(), candidate_id: 2 }).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, b) = api.post("/api/vote", &VoteRequest { session_id: session.session_id, candidate_id: 2 }).await;
    assert_problem(s, &b, StatusCode::UNAUTHORIZED, "SESSION_INVALID");
    let (s, b) = api.post("/api/vote", &VoteRequest { session_id: "zz".into(), candidate_id: 2 }).await;
    assert_problem(s, &b, StatusCode::UNAUTHORIZED, "SESSION_INVALID");

    let (s, b) = api.post("/api/authenticate", &api.authenticate_request(&address, 1, 0.05)).await;
    let session: AuthenticateResponse = serde_json::from_value(b).unwrap();
    assert_eq!(s, StatusCode::OK);
    let (s, b) = api.post("/api/vote", &VoteRequest { session_id: session.session_id, candidate_id: 1 }).await;
    assert_problem(s, &b, StatusCode::CONFLICT, "ALREADY_VOTED");

    let (s, body) = api.get("/api/blocks/999").await;
    assert_problem(s, &serde_json::from_str(&body).unwrap(), StatusCode::NOT_FOUND, "BLOCK_NOT_FOUND");
    let (s, body) = api.get("/api/blocks/abc").await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn signing_key_never_leaves_the_key_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    seeded_key(&cfg);
    let secret = expected_secret();
    let secret_hex = hex::encode(&secret);

    let handle = launch(cfg.clone()).await.unwrap();
    let api = Api::new(&handle);
    for (subject, candidate) in [(1, 1), (2, 3), (3, 2), (4, 2), (5, 1)] {
        api.vote(subject, candidate).await;
    }
    let mut responses = Vec::new();
    for i in 0..11 {
        responses.push(api.get(&format!("/api/blocks/{i}")).await.1);
    }
    for path in ["/api/tally", "/api/chain/verify", "/api/events", "/metrics"] {
        responses.push(api.get(path).await.1);
    }
    handle.shutdown().await.unwrap();

    let mut artifacts = vec![std::fs::read(cfg.ledger_path()).unwrap(), std::fs::read(cfg.templates_path()).unwrap()];
    artifacts.push(std::fs::read(cfg.snapshot_path()).unwrap());
    assert!(!contains(&std::fs::read(&cfg.authority_key).unwrap(), &secret), "key file stores the key in clear");
    // any 32-byte window of the encoded key, raw or hex
    for window in secret.chunks(32).filter(|c| c.len() == 32) {
        let window_hex = hex::encode(window);
        for a in &artifacts {
            assert!(!contains(a, window));
            assert!(!contains(a, window_hex.as_bytes()));
        }
        for r in &responses {
            assert!(!r.contains(&window_hex));
        }
    }
    assert!(responses.iter().all(|r| !r.contains(&secret_hex)));
    // the public key is the only key material exposed
    assert!(responses.iter().any(|r| r.contains("\"authority_signature\"")));
}
