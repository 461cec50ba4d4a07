use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use rand::Rng;
use reqwest::{Client, StatusCode};
use serde_json::Value;

use super::{BenchError, BlockSizes, GasFractions, Op, OpSample, RawLevel, RawLog};
use crate::biometric::SyntheticProvider;
use crate::ledger::{GasModel, PersonalInfo};
use crate::service::api::{AuthenticateRequest, AuthenticateResponse, RegisterRequest, RegisterResponse, VoteRequest, VoteResponse};

/// Identities per run: the citizenship number carries a 7-digit counter.
const IDENTITY_SPACE: usize = 10_000_000;
const WARMUP_CYCLES: usize = 5;

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub target: String,
    pub levels: Vec<usize>,
    /// Enroll+authenticate cycles per level; raised to the level's
    /// concurrency so every client issues at least one.
    pub ops_per_level: usize,
    /// Block gas limit of the target, for the gas fractions.
    pub block_gas_limit: u64,
    /// Per-coordinate capture noise of the synthetic identities.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl LoadOptions {
    pub fn new(target: impl Into<String>) -> Self {
        LoadOptions {
            target: target.into(),
            levels: super::DEFAULT_LEVELS.to_vec(),
            ops_per_level: 50,
            block_gas_limit: GasModel::default().block_gas_limit,
            noise_sigma: 0.05,
            seed: rand::thread_rng().gen(),
        }
    }
}

/// Disposable identity `n` of a run, with a nominal 100-byte record.
fn identity(run: u16, n: usize) -> PersonalInfo {
    PersonalInfo {
        full_name: format!("Bench Voter {n:08}"),
        phone: format!("97{n:08}"),
        date_of_birth: "1985-06-30".into(),
        citizenship_number: format!("B{run:04x}{n:07}"),
        address: format!("{:<48}", format!("Load Test Ward {}, Lalitpur Metropolitan", n % 100)),
    }
}

struct Target {
    client: Client,
    base: String,
    provider: SyntheticProvider,
    run: u16,
}

impl Target {
    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base.trim_end_matches('/'), path)
    }

    fn unreachable(&self, e: impl std::fmt::Display) -> BenchError {
        BenchError::TargetUnreachable { target: self.base.clone(), reason: e.to_string() }
    }

    async fn post<Req: serde::Serialize, Resp: serde::de::DeserializeOwned>(
        &self,
        op: &'static str,
        path: &str,
        body: &Req,
        expect: StatusCode,
    ) -> Result<Resp, BenchError> {
        let resp = self.client.post(self.url(path)).json(body).send().await.map_err(|e| self.unreachable(e))?;
        let status = resp.status();
        if status != expect {
            let body = resp.text().await.unwrap_or_default();
            return Err(BenchError::RequestFailed { op, status: status.as_u16(), body });
        }
        resp.json().await.map_err(|e| BenchError::RequestFailed { op, status: status.as_u16(), body: e.to_string() })
    }

    async fn get_json(&self, path: &str) -> Result<Value, BenchError> {
        let resp = self.client.get(self.url(path)).send().await.map_err(|e| self.unreachable(e))?;
        resp.json().await.map_err(|e| self.unreachable(e))
    }

    async fn verify_histogram(&self) -> Result<(f64, u64), BenchError> {
        let resp = self.client.get(self.url("/metrics")).send().await.map_err(|e| self.unreachable(e))?;
        let text = resp.text().await.map_err(|e| self.unreachable(e))?;
        let value = |name: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(name).and_then(|rest| rest.strip_prefix(' ')))
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| self.unreachable(format!("metric {name} missing from /metrics")))
        };
        Ok((value("verify_latency_ms_sum")?, value("verify_latency_ms_count")? as u64))
    }

    fn register_request(&self, n: usize) -> RegisterRequest {
        RegisterRequest {
            personal: identity(self.run, n),
            embedding: self.provider.template(n as u64).into_iter().map(f64::from).collect(),
            spoof_score: 0.05,
        }
    }

    fn authenticate_request(&self, address: String, n: usize) -> AuthenticateRequest {
        AuthenticateRequest { address, embedding: self.provider.raw_capture(n as u64, 0), spoof_score: 0.05 }
    }

    /// One enroll+authenticate cycle on pre-built requests.
    async fn cycle(&self, n: usize, register: RegisterRequest) -> Result<[OpSample; 2], BenchError> {
        let t = Instant::now();
        let reg: RegisterResponse = self.post("register", "/api/register", &register, StatusCode::CREATED).await?;
        let reg_ms = t.elapsed().as_secs_f64() * 1000.0;
        let auth = self.authenticate_request(reg.address.to_string(), n);
        let t = Instant::now();
        let _: AuthenticateResponse = self.post("authenticate", "/api/authenticate", &auth, StatusCode::OK).await?;
        let auth_ms = t.elapsed().as_secs_f64() * 1000.0;
        Ok([OpSample { op: Op::Register, ms: reg_ms }, OpSample { op: Op::Authenticate, ms: auth_ms }])
    }
}

/// Runs every level against a live node and returns the raw measurements.
pub async fn run_load(options: &LoadOptions) -> Result<RawLog, BenchError> {
    if options.levels.is_empty() {
        return Err(BenchError::NoLevels);
    }
    let cycles: Vec<usize> = options.levels.iter().map(|&c| options.ops_per_level.max(c)).collect();
    let needed = WARMUP_CYCLES + cycles.iter().sum::<usize>();
    if needed > IDENTITY_SPACE {
        return Err(BenchError::InsufficientIdentities { needed, available: IDENTITY_SPACE });
    }
    let target = Arc::new(Target {
        client: Client::new(),
        base: options.target.clone(),
        provider: SyntheticProvider::new(options.seed, options.noise_sigma),
        run: (options.seed & 0xffff) as u16,
    });
    target.get_json("/api/chain/verify").await?;

    // warmup: sequential cycles, and the block size and gas samples
    let mut first_registration = None;
    let mut warm = Vec::new();
    for n in 0..WARMUP_CYCLES {
        let req = target.register_request(n);
        let reg: RegisterResponse = target.post("register", "/api/register", &req, StatusCode::CREATED).await?;
        first_registration.get_or_insert(reg.block_index);
        warm.push((reg.address.to_string(), n));
    }
    let (address, n) = warm[0].clone();
    let session: AuthenticateResponse =
        target.post("authenticate", "/api/authenticate", &target.authenticate_request(address, n), StatusCode::OK).await?;
    let candidate = first_candidate(&target).await?;
    let vote: VoteResponse = target
        .post("vote", "/api/vote", &VoteRequest { session_id: session.session_id, candidate_id: candidate }, StatusCode::CREATED)
        .await?;
    let reg_block = target.get_json(&format!("/api/blocks/{}", first_registration.unwrap())).await?;
    let vote_block = target.get_json(&format!("/api/blocks/{}", vote.block_index)).await?;
    let field = |b: &Value, k: &str| b[k].as_u64().ok_or_else(|| target.unreachable(format!("block JSON lacks {k}")));
    let block_sizes =
        BlockSizes { registration_bytes: field(&reg_block, "size")? as usize, vote_bytes: field(&vote_block, "size")? as usize };
    let limit = options.block_gas_limit as f64;
    let gas = GasFractions {
        registration_fraction: field(&reg_block, "gas_used")? as f64 / limit,
        vote_fraction: field(&vote_block, "gas_used")? as f64 / limit,
    };

    let mut next_identity = WARMUP_CYCLES;
    let mut levels = Vec::new();
    for (&concurrency, &count) in options.levels.iter().zip(&cycles) {
        // identities and request bodies are built before the clock starts
        let requests: Vec<(usize, RegisterRequest)> =
            (next_identity..next_identity + count).map(|n| (n, target.register_request(n))).collect();
        next_identity += count;
        let queue = Arc::new(Mutex::new(requests.into_iter()));
        let samples = Arc::new(Mutex::new(Vec::with_capacity(2 * count)));
        let issued = Arc::new(AtomicUsize::new(0));

        let (verify_sum0, verify_count0) = target.verify_histogram().await?;
        let mut workers = Vec::with_capacity(concurrency);
        for _ in 0..concurrency {
            let (target, queue, samples, issued) = (target.clone(), queue.clone(), samples.clone(), issued.clone());
            workers.push(tokio::spawn(async move {
                loop {
                    let Some((n, req)) = queue.lock().next() else { return Ok(()) };
                    issued.fetch_add(1, Ordering::Relaxed);
                    let pair = target.cycle(n, req).await?;
                    samples.lock().extend(pair);
                }
            }));
        }
        for w in workers {
            w.await.map_err(|e| target.unreachable(e))??;
        }
        let (verify_sum1, verify_count1) = target.verify_histogram().await?;
        let ops = std::mem::take(&mut *samples.lock());
        tracing::info!(concurrency, cycles = issued.load(Ordering::Relaxed), "level complete");
        levels.push(RawLevel { concurrency, ops, verify_sum_ms: verify_sum1 - verify_sum0, verify_count: verify_count1 - verify_count0 });
    }
    Ok(RawLog { levels, block_sizes, gas })
}

async fn first_candidate(target: &Target) -> Result<u32, BenchError> {
    let tally = target.get_json("/api/tally").await?;
    tally
        .as_object()
        .and_then(|m| m.keys().filter_map(|k| k.parse().ok()).min())
        .ok_or_else(|| target.unreachable("target lists no candidates"))
}
