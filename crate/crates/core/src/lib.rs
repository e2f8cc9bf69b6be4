// SPDX-License-Identifier: Apache-2.0

//! Throughput, per-call overhead and energy benchmarks for traffic that must
//! cross an emulated trusted-execution boundary.

pub mod apps;
pub mod boundary;
pub mod cli;
pub mod client;
pub mod config;
pub mod energy;
pub mod kvbench;
pub mod kvstore;
pub mod memory;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod server;
pub mod timing;
pub mod units;
