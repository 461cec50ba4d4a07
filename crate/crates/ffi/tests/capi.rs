use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pqballot::ledger::{BlockStore, Candidate, FileBlockStore, GasModel, GenesisPayload, Ledger, Payload, SystemClock};
use pqballot::sigscheme::keyfile::FileKeyStore;
use pqballot::sigscheme::Profile;
use pqballot_ffi::*;

fn keypair(seed: u8) -> *mut PqbKeyPair {
    let mut keys = ptr::null_mut();
    assert_eq!(unsafe { pqb_keypair_generate(PQB_PROFILE_F512, [seed; 32].as_ptr(), &mut keys) }, PqbStatus::Ok);
    assert!(!keys.is_null());
    keys
}

fn public_key(keys: *const PqbKeyPair) -> Vec<u8> {
    let mut out = vec![0u8; 4096];
    let mut len = 0;
    assert_eq!(unsafe { pqb_keypair_public_key(keys, out.as_mut_ptr(), out.len(), &mut len) }, PqbStatus::Ok);
    out.truncate(len);
    out
}

fn sign(keys: *const PqbKeyPair, msg: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; 4096];
    let mut len = 0;
    assert_eq!(unsafe { pqb_sign(keys, msg.as_ptr(), msg.len(), out.as_mut_ptr(), out.len(), &mut len) }, PqbStatus::Ok);
    out.truncate(len);
    out
}

fn verify(pk: &[u8], msg: &[u8], sig: &[u8]) -> (PqbStatus, bool) {
    let mut valid = false;
    let status =
        unsafe { pqb_verify(PQB_PROFILE_F512, pk.as_ptr(), pk.len(), msg.as_ptr(), msg.len(), sig.as_ptr(), sig.len(), &mut valid) };
    (status, valid)
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { pqb_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn sign_and_verify_through_the_abi() {
    let keys = keypair(1);
    let pk = public_key(keys);
    assert_eq!(pk.len(), pqb_public_key_len(PQB_PROFILE_F512));
    let sig = sign(keys, b"ballot 1");
    assert_eq!(sig.len(), pqb_signature_len(PQB_PROFILE_F512));
    assert_eq!(verify(&pk, b"ballot 1", &sig), (PqbStatus::Ok, true));
    assert_eq!(verify(&pk, b"ballot 2", &sig), (PqbStatus::Ok, false));

    // the same seed gives the same public key
    let again = keypair(1);
    assert_eq!(public_key(again), pk);
    assert_ne!(public_key(keypair(2)), pk);
    unsafe {
        pqb_keypair_free(keys);
        pqb_keypair_free(again);
        pqb_keypair_free(ptr::null_mut());
    }
}

#[test]
fn argument_errors_have_codes_and_messages() {
    let keys = keypair(3);
    let pk = public_key(keys);
    let sig = sign(keys, b"m");

    let mut len = 0;
    let mut small = [0u8; 8];
    let status = unsafe { pqb_sign(keys, b"m".as_ptr(), 1, small.as_mut_ptr(), small.len(), &mut len) };
    assert_eq!(status, PqbStatus::BufferTooSmall);
    assert_eq!(len, Profile::F512.signature_len());
    assert!(last_error().contains("need 666 bytes"));

    let mut valid = true;
    let status = unsafe { pqb_verify(PQB_PROFILE_F512, ptr::null(), pk.len(), b"m".as_ptr(), 1, sig.as_ptr(), sig.len(), &mut valid) };
    assert_eq!(status, PqbStatus::NullArgument);
    assert!(valid, "outputs are untouched on failure");
    assert!(last_error().contains("public_key"));

    assert_eq!(verify(&pk[..100], b"m", &sig).0, PqbStatus::MalformedEncoding);
    assert_eq!(verify(&pk, b"m", &sig[..300]).0, PqbStatus::MalformedEncoding);
    let mut keys2 = ptr::null_mut();
    assert_eq!(unsafe { pqb_keypair_generate(777, ptr::null(), &mut keys2) }, PqbStatus::InvalidArgument);
    assert!(keys2.is_null());
    assert_eq!(pqb_public_key_len(777), 0);

    // success clears the message
    assert_eq!(verify(&pk, b"m", &sig), (PqbStatus::Ok, true));
    assert_eq!(last_error(), "");
    let described = unsafe { CStr::from_ptr(pqb_status_str(PqbStatus::BufferTooSmall)) };
    assert_eq!(described.to_str().unwrap(), "output buffer too small");
    unsafe { pqb_keypair_free(keys) };
}

#[test]
fn embedding_helpers_match_the_library() {
    let a: Vec<f64> = (0..512).map(|i| ((i * 37 % 101) as f64) - 50.0).collect();
    let b: Vec<f64> = a.iter().map(|v| v * 3.5).collect();
    let mut digest = [0u8; 32];
    assert_eq!(unsafe { pqb_embedding_digest(a.as_ptr(), a.len(), digest.as_mut_ptr()) }, PqbStatus::Ok);
    assert_eq!(digest, pqballot::biometric::normalize(&a).unwrap().digest());
    let mut s = 0.0;
    assert_eq!(unsafe { pqb_cosine_similarity(a.as_ptr(), b.as_ptr(), a.len(), &mut s) }, PqbStatus::Ok);
    assert!((s - 1.0).abs() < 1e-6);
    assert_eq!(unsafe { pqb_embedding_digest(a.as_ptr(), 100, digest.as_mut_ptr()) }, PqbStatus::InvalidArgument);
}

#[test]
fn key_files_and_ledger_files() {
    let dir = tempfile::tempdir().unwrap();
    let key_path = dir.path().join("authority.key");
    let authority = FileKeyStore::new(&key_path, "pw").create(Profile::F512, Some([9; 32]), 1_000).unwrap();

    let path = CString::new(key_path.to_str().unwrap()).unwrap();
    let mut keys = ptr::null_mut();
    assert_eq!(unsafe { pqb_keypair_load(path.as_ptr(), c"wrong".as_ptr(), &mut keys) }, PqbStatus::KeyFile);
    assert_eq!(unsafe { pqb_keypair_load(path.as_ptr(), c"pw".as_ptr(), &mut keys) }, PqbStatus::Ok);
    let pk = public_key(keys);
    assert_eq!(pk, authority.public().as_bytes());
    unsafe { pqb_keypair_free(keys) };

    let ledger_path = dir.path().join("ledger.bin");
    {
        let store = FileBlockStore::open(&ledger_path).unwrap();
        let ledger =
            Ledger::open(Box::new(store), authority.public().clone(), GasModel::default(), std::sync::Arc::new(SystemClock)).unwrap();
        let genesis = GenesisPayload { candidates: vec![Candidate { id: 1, name: "Alpha".into() }] };
        ledger.append(Payload::Genesis(genesis), authority.secret()).unwrap();
    }
    let report = verify_file(&ledger_path, &pk);
    assert_eq!(report, PqbChainReport { valid: true, length: 1, first_bad_index: -1 });

    // a torn tail is ignored and left in place
    let mut bytes = std::fs::read(&ledger_path).unwrap();
    bytes.extend_from_slice(&[0, 0, 3, 0, 1, 2]);
    std::fs::write(&ledger_path, &bytes).unwrap();
    assert_eq!(verify_file(&ledger_path, &pk), report);
    assert_eq!(std::fs::read(&ledger_path).unwrap(), bytes);

    bytes[4 + 10] ^= 0x40;
    std::fs::write(&ledger_path, &bytes).unwrap();
    assert_eq!(verify_file(&ledger_path, &pk), PqbChainReport { valid: false, length: 1, first_bad_index: 0 });
    assert_eq!(FileBlockStore::open(&ledger_path).unwrap().load().unwrap().len(), 1);

    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    let mut r = PqbChainReport { valid: false, length: 0, first_bad_index: 0 };
    let status = unsafe { pqb_verify_chain_file(missing.as_ptr(), PQB_PROFILE_F512, pk.as_ptr(), pk.len(), &mut r) };
    assert_eq!(status, PqbStatus::Io);
}

fn verify_file(path: &Path, pk: &[u8]) -> PqbChainReport {
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut r = PqbChainReport { valid: false, length: 0, first_bad_index: 0 };
    let status = unsafe { pqb_verify_chain_file(c_path.as_ptr(), PQB_PROFILE_F512, pk.as_ptr(), pk.len(), &mut r) };
    assert_eq!(status, PqbStatus::Ok, "{}", last_error());
    r
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = crate_dir().join("include").join("pqballot.h");
    for (lang, std) in [("c", "-std=c11"), ("c++", "-std=c++17")] {
        let out = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Wextra", "-Werror", std, "-x", lang])
            .arg(&header)
            .output()
            .expect("a C compiler is installed");
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&header).unwrap();
    let source = std::fs::read_to_string(crate_dir().join("src").join("lib.rs")).unwrap();
    for line in source.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(text.contains(&format!("{name}(")), "{name} is missing from the header");
    }
}

#[test]
fn c_program_links_against_the_shared_library() {
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    if !profile_dir.join("libpqballot_ffi.so").exists() {
        eprintln!("shared library not built; skipping link test");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("roundtrip");
    let out = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests").join("c").join("roundtrip.c"))
        .arg("-L")
        .arg(&profile_dir)
        .arg(format!("-Wl,-rpath,{}", profile_dir.display()))
        .args(["-lpqballot_ffi", "-o"])
        .arg(&exe)
        .output()
        .expect("a C compiler is installed");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
