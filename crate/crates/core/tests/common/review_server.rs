use std::net::SocketAddr;
use std::sync::Arc;

use skyeye_forge::domain::InstructionSample;
use skyeye_forge::service::{router, AppState, ServiceConfig};

pub struct Running {
    pub base: String,
    shutdown: tokio::sync::oneshot::Sender<()>,
    handle: tokio::task::JoinHandle<()>,
}

impl Running {
    pub async fn start(samples: Vec<InstructionSample>, config: ServiceConfig) -> Running {
        let state = Arc::new(AppState::new(samples, config).expect("service state"));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr: SocketAddr = listener.local_addr().unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let handle = tokio::spawn(async move {
            axum::serve(listener, router(state))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
        Running {
            base: format!("http://{addr}/v1"),
            shutdown: tx,
            handle,
        }
    }

    pub async fn stop(self) {
        let _ = self.shutdown.send(());
        self.handle.await.unwrap();
    }
}
