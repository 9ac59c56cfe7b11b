//! Serve the HTTP API over a small phantom dataset and an untrained model.
//!
//!     cargo run --release --example serve
//!     curl localhost:8080/subjects | head -c 300

use std::sync::Arc;

use daa_core::config::{desk_net, PhantomOptions};
use daa_core::model::ModelBundle;
use daa_core::nets::Classifier;
use daa_core::service::{serve, ServiceState};
use daa_core::workflow::phantom_dataset;

#[tokio::main]
async fn main() -> daa_core::Result<()> {
    let net = desk_net();
    let state = ServiceState {
        dataset: Some(phantom_dataset(&PhantomOptions { n: 20, ..PhantomOptions::default() })?),
        model: Some(ModelBundle::new(net, Classifier::new(net.classifier_config(), 0)?, 0)?),
    };
    let addr = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into());
    println!("listening on http://{addr}");
    serve(addr.parse().expect("socket address"), Arc::new(state), 2).await
}
