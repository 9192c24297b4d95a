#![allow(dead_code)]

use std::sync::Arc;

use labmcp_core::Host;
use labmcp_protocol::server::spawn_in_process;
use labmcp_servers::fixture::{self, Counters};

pub const FX: &str = "fx";

pub async fn fixture_host() -> (Host, Arc<Counters>) {
    let host = Host::new();
    let counters = add_fixture(&host, FX).await;
    (host, counters)
}

pub async fn add_fixture(host: &Host, alias: &str) -> Arc<Counters> {
    let (server, counters) = fixture::server().unwrap();
    host.register_connection(alias, spawn_in_process(server))
        .await
        .unwrap();
    counters
}
