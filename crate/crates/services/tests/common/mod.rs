#![allow(dead_code)]

use tplmarket_core::protocol::NodeInfo;
use tplmarket_core::sandbox::EXAMPLE_POLICY;
use tplmarket_services::api::{ProductMetadata, Role};
use tplmarket_services::client::{sell, Offer};
use tplmarket_services::deploy::LocalDeployment;

pub fn records(n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| 20 + i % 50).collect()
}

pub fn offer(product_id: &str, policy: &str, records: Vec<i64>) -> Offer {
    Offer {
        product_id: product_id.to_owned(),
        policy: policy.to_owned(),
        metadata: ProductMetadata {
            title: format!("Dataset {product_id}"),
            description: "synthetic records".into(),
            record_count: records.len() as u64,
            tags: vec!["synthetic".into()],
        },
        records,
    }
}

/// Registers a seller and returns its account id and the node directory.
pub fn seller(d: &LocalDeployment, name: &str) -> (String, Vec<NodeInfo>) {
    let reg = d.market().register(name, Role::Seller).unwrap();
    (reg.account_id, reg.directory)
}

/// Publishes `records` under the example policy.
pub fn publish(d: &LocalDeployment, seller_id: &str, directory: &[NodeInfo], id: &str, records: Vec<i64>) -> String {
    sell(&d.market(), &d.storage_client(), seller_id, directory, offer(id, EXAMPLE_POLICY, records)).unwrap()
}
