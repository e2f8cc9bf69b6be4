// SPDX-License-Identifier: Apache-2.0

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use tzperf_ffi::*;

fn last_error() -> String {
    let p = tz_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn kv_round_trip_and_errors() {
    let mut kv = ptr::null_mut();
    unsafe {
        assert_eq!(tz_kv_new(64, &mut kv), TzStatus::Ok);
        assert_eq!(tz_kv_put(kv, 1, b"abcd".as_ptr(), 4), TzStatus::Ok);
        let mut buf = [0u8; 2];
        let mut len = 0;
        assert_eq!(
            tz_kv_get(kv, 1, buf.as_mut_ptr(), 2, &mut len),
            TzStatus::BufferTooSmall
        );
        assert_eq!(len, 4);
        let mut buf = [0u8; 8];
        assert_eq!(
            tz_kv_get(kv, 1, buf.as_mut_ptr(), 8, &mut len),
            TzStatus::Ok
        );
        assert_eq!(&buf[..len], b"abcd");
        assert_eq!(
            tz_kv_get(kv, 2, buf.as_mut_ptr(), 8, &mut len),
            TzStatus::NotFound
        );
        assert!(last_error().contains("not found"));

        let big = [0u8; 100];
        assert_eq!(
            tz_kv_put(kv, 3, big.as_ptr(), big.len()),
            TzStatus::OutOfMemory
        );
        assert_eq!(tz_kv_put(kv, 3, big.as_ptr(), 0), TzStatus::InvalidArgument);
        let mut count = 0;
        assert_eq!(tz_kv_len(kv, &mut count), TzStatus::Ok);
        assert_eq!(count, 1);
        assert_eq!(tz_kv_del(kv, 1), TzStatus::Ok);
        assert_eq!(tz_kv_del(kv, 1), TzStatus::NotFound);
        tz_kv_free(kv);
    }
}

#[test]
fn null_handles_are_rejected() {
    unsafe {
        assert_eq!(tz_kv_del(ptr::null_mut(), 1), TzStatus::NullPointer);
        assert_eq!(tz_config_validate(ptr::null()), TzStatus::NullPointer);
        let mut out = TzRunResult::default();
        assert_eq!(
            tz_run_client(ptr::null(), ptr::null(), &mut out),
            TzStatus::NullPointer
        );
        tz_kv_free(ptr::null_mut());
        tz_config_free(ptr::null_mut());
        tz_server_free(ptr::null_mut());
        assert_eq!(tz_config_new(ptr::null_mut()), TzStatus::NullPointer);
    }
}

#[test]
fn config_validation_reports_fields() {
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(tz_config_new(&mut cfg), TzStatus::Ok);
        assert_eq!(tz_config_validate(cfg), TzStatus::Ok);
        assert_eq!(tz_config_set_transport(cfg, 1, 70_000, 4096), TzStatus::Ok);
        assert_eq!(tz_config_validate(cfg), TzStatus::InvalidArgument);
        assert!(last_error().contains("chunk_size"), "{}", last_error());
        assert_eq!(
            tz_config_set_transport(cfg, 9, 1024, 4096),
            TzStatus::InvalidArgument
        );
        assert_eq!(
            tz_config_set_execution(cfg, 1, 7, 0.0),
            TzStatus::InvalidArgument
        );
        assert_eq!(tz_config_set_fixed_duration(cfg, -1.0), TzStatus::Ok);
        let mut out = TzRunResult::default();
        assert_eq!(
            tz_run_client(cfg, ptr::null(), &mut out),
            TzStatus::InvalidArgument
        );
        tz_config_free(cfg);
    }
}

#[test]
fn energy_and_throughput() {
    let trace = [
        TzPowerSample {
            timestamp: 0.0,
            power: 0.0,
        },
        TzPowerSample {
            timestamp: 10.0,
            power: 10.0,
        },
    ];
    let mut report = TzEnergyReport::default();
    unsafe {
        assert_eq!(
            tz_integrate_energy(trace.as_ptr(), 2, 0.0, 10.0, &mut report),
            TzStatus::Ok
        );
        assert_eq!(report.energy, 50.0);
        assert_eq!(
            tz_integrate_energy(trace.as_ptr(), 2, 0.0, 11.0, &mut report),
            TzStatus::InvalidArgument
        );
        let reversed = [trace[1], trace[0]];
        assert_eq!(
            tz_integrate_energy(reversed.as_ptr(), 2, 0.0, 10.0, &mut report),
            TzStatus::InvalidArgument
        );

        let run = TzRunResult {
            bytes_transferred: 1_000_000,
            total_runtime: 2.0,
            ..TzRunResult::default()
        };
        let mut bps = 0.0;
        assert_eq!(tz_derive_throughput(&run, &mut bps), TzStatus::Ok);
        assert_eq!(bps, 4_000_000.0);
        let idle = TzRunResult::default();
        assert_eq!(
            tz_derive_throughput(&idle, &mut bps),
            TzStatus::InvalidArgument
        );
    }
}

#[test]
fn boundary_run_through_the_abi() {
    let host = CString::new("127.0.0.1").unwrap();
    unsafe {
        let mut srv = ptr::null_mut();
        assert_eq!(tz_server_start(host.as_ptr(), 0, &mut srv), TzStatus::Ok);
        let mut port = 0;
        assert_eq!(tz_server_port(srv, &mut port), TzStatus::Ok);
        let mut cfg = ptr::null_mut();
        assert_eq!(tz_config_new(&mut cfg), TzStatus::Ok);
        assert_eq!(tz_config_set_target(cfg, host.as_ptr(), port), TzStatus::Ok);
        assert_eq!(tz_config_set_fixed_bytes(cfg, 64 * 1024 * 10), TzStatus::Ok);
        assert_eq!(
            tz_config_set_transport(cfg, 0, 64 * 1024, 128 * 1024),
            TzStatus::Ok
        );
        assert_eq!(tz_config_set_execution(cfg, 1, 2, 0.0), TzStatus::Ok);
        let mut run = TzRunResult::default();
        assert_eq!(tz_run_client(cfg, ptr::null(), &mut run), TzStatus::Ok);
        assert!(run.has_boundary);
        assert_eq!(run.transmit_calls, 10);
        assert_eq!(run.crossings, 2 * (run.rpc_count + 3));
        let (mut bytes, mut digest) = (0, 0);
        assert_eq!(
            tz_server_next_flow(srv, 10.0, &mut bytes, &mut digest),
            TzStatus::Ok
        );
        assert_eq!(bytes, run.bytes_transferred);
        assert_eq!(digest, run.digest);
        tz_config_free(cfg);
        tz_server_free(srv);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(tz_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/abi-* -> target/<profile>
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libtzperf_ffi.so");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-o")
        .arg(&exe)
        .arg("-L")
        .arg(&profile_dir)
        .arg("-ltzperf_ffi")
        .arg(format!("-Wl,-rpath,{}", profile_dir.display()))
        .status();
    let Ok(status) = status else {
        eprintln!("skipping: no C compiler");
        return;
    };
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "smoke exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("crossings"));
}
