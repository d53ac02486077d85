//! Records every HTTP exchange a service sees, bodies included. Used by
//! tests that inspect what actually crosses the network.

use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::Router;

#[derive(Clone, Debug)]
pub struct Exchange {
    pub service: String,
    pub method: String,
    pub path: String,
    pub request: Vec<u8>,
    pub status: u16,
    pub response: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct Capture(Arc<Mutex<Vec<Exchange>>>);

impl Capture {
    pub fn exchanges(&self) -> Vec<Exchange> {
        self.0.lock().expect("capture lock").clone()
    }

    pub fn clear(&self) {
        self.0.lock().expect("capture lock").clear();
    }

    /// Wraps `router` so its traffic is recorded under `service`.
    pub fn wrap(&self, service: &str, router: Router) -> Router {
        let tap = Tap {
            capture: self.clone(),
            service: service.to_owned(),
        };
        router.layer(middleware::from_fn_with_state(tap, record))
    }
}

#[derive(Clone)]
struct Tap {
    capture: Capture,
    service: String,
}

async fn record(State(tap): State<Tap>, req: Request, next: Next) -> Response {
    let (parts, body) = req.into_parts();
    let request = to_bytes(body, usize::MAX).await.unwrap_or_default();
    let method = parts.method.to_string();
    let path = parts.uri.to_string();
    let resp = next.run(Request::from_parts(parts, Body::from(request.clone()))).await;
    let (parts, body) = resp.into_parts();
    let response = to_bytes(body, usize::MAX).await.unwrap_or_default();
    tap.capture.0.lock().expect("capture lock").push(Exchange {
        service: tap.service,
        method,
        path,
        request: request.to_vec(),
        status: parts.status.as_u16(),
        response: response.to_vec(),
    });
    Response::from_parts(parts, Body::from(response))
}
