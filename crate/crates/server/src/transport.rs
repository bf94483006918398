//! Network bindings for [`DebugService`]: newline-delimited JSON over TCP,
//! and the same payloads as WebSocket text frames at `/debug`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;

use crate::service::DebugService;

pub const WS_PATH: &str = "/debug";

#[derive(Debug, Clone, Copy)]
pub struct Endpoint {
    pub tcp: SocketAddr,
    /// Optional WebSocket listener.
    pub ws: Option<SocketAddr>,
}

impl Endpoint {
    /// Loopback endpoint on `port`, with the WebSocket binding on the next
    /// port. Port 0 picks free ports for both.
    pub fn local(port: u16) -> Endpoint {
        let ws_port = if port == 0 { 0 } else { port.wrapping_add(1) };
        Endpoint {
            tcp: SocketAddr::from(([127, 0, 0, 1], port)),
            ws: Some(SocketAddr::from(([127, 0, 0, 1], ws_port))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindError { addr: SocketAddr, source: std::io::Error },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::BindError { .. } => "BindError",
            ServeError::Io(_) => "IoError",
        }
    }
}

/// A running service. Dropping the handle stops it.
#[derive(Debug)]
pub struct ServiceHandle {
    pub tcp_addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    /// Blocks until the service stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn bind(addr: SocketAddr) -> Result<std::net::TcpListener, ServeError> {
    let listener = std::net::TcpListener::bind(addr).map_err(|source| ServeError::BindError { addr, source })?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

/// Binds the endpoint and serves on a background thread.
pub fn serve(service: Arc<DebugService>, endpoint: Endpoint) -> Result<ServiceHandle, ServeError> {
    let tcp = bind(endpoint.tcp)?;
    let ws = endpoint.ws.map(bind).transpose()?;
    let tcp_addr = tcp.local_addr()?;
    let ws_addr = ws.as_ref().map(|l| l.local_addr()).transpose()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .thread_name("aad-debug")
        .build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let tcp = TcpListener::from_std(tcp).expect("listener registers");
            let ws_task = ws.map(|l| {
                let listener = TcpListener::from_std(l).expect("listener registers");
                let app = Router::new().route(WS_PATH, get(ws_upgrade)).with_state(service.clone());
                tokio::spawn(async move {
                    let _ = axum::serve(listener, app).await;
                })
            });
            let accept = async {
                loop {
                    match tcp.accept().await {
                        Ok((stream, _)) => {
                            tokio::spawn(tcp_client(service.clone(), stream));
                        }
                        Err(_) => continue,
                    }
                }
            };
            tokio::select! {
                _ = accept => {}
                _ = rx => {}
            }
            if let Some(task) = ws_task {
                task.abort();
            }
        });
        runtime.shutdown_background();
    });
    Ok(ServiceHandle {
        tcp_addr,
        ws_addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

async fn tcp_client(service: Arc<DebugService>, stream: TcpStream) {
    let (id, mut outbox) = service.connect();
    let (read, mut write) = stream.into_split();
    let writer = tokio::spawn(async move {
        while let Some(mut line) = outbox.recv().await {
            line.push('\n');
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
    });
    let mut lines = BufReader::new(read).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        if line.trim().is_empty() {
            continue;
        }
        let svc = service.clone();
        if tokio::task::spawn_blocking(move || svc.handle_line(id, &line)).await.is_err() {
            break;
        }
    }
    service.disconnect(id);
    let _ = writer.await;
}

async fn ws_upgrade(State(service): State<Arc<DebugService>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| ws_client(service, socket))
}

async fn ws_client(service: Arc<DebugService>, socket: WebSocket) {
    let (id, mut outbox) = service.connect();
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(line) = outbox.recv().await {
            if sink.send(Message::Text(line.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(message)) = stream.next().await {
        let text = match message {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let svc = service.clone();
        if tokio::task::spawn_blocking(move || svc.handle_line(id, &text)).await.is_err() {
            break;
        }
    }
    service.disconnect(id);
    let _ = writer.await;
}
