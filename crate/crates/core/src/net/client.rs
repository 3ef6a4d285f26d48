use std::time::Duration;

use futures_util::stream::{SplitSink, SplitStream};
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::{self, Message};
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use crate::protocol::{encode, ClientMessage};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    Ws(#[from] tungstenite::Error),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
}

/// Minimal relay client: text frames in, text frames out.
pub struct WsClient {
    ws: Ws,
}

fn url(addr: &str) -> String {
    if addr.starts_with("ws://") || addr.starts_with("wss://") {
        addr.to_owned()
    } else {
        format!("ws://{addr}/")
    }
}

async fn next_text(stream: &mut (impl StreamExt<Item = Result<Message, tungstenite::Error>> + Unpin)) -> Result<Option<String>, ClientError> {
    while let Some(msg) = stream.next().await {
        match msg {
            Ok(Message::Text(t)) => return Ok(Some(t.as_str().to_owned())),
            Ok(Message::Close(_)) => return Ok(None),
            Ok(_) => continue,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(None)
}

impl WsClient {
    /// `addr` is `host:port` or a full `ws://` URL.
    pub async fn connect(addr: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url(addr)).await?;
        if let MaybeTlsStream::Plain(tcp) = ws.get_ref() {
            let _ = tcp.set_nodelay(true);
        }
        Ok(WsClient { ws })
    }

    pub async fn send(&mut self, msg: &ClientMessage) -> Result<(), ClientError> {
        self.send_raw(&encode(msg)).await
    }

    pub async fn send_raw(&mut self, text: &str) -> Result<(), ClientError> {
        self.ws.send(Message::text(text)).await?;
        Ok(())
    }

    /// Next text frame, or `None` once the server has closed.
    pub async fn recv(&mut self) -> Result<Option<String>, ClientError> {
        next_text(&mut self.ws).await
    }

    pub async fn recv_timeout(&mut self, limit: Duration) -> Result<Option<String>, ClientError> {
        tokio::time::timeout(limit, self.recv())
            .await
            .map_err(|_| ClientError::Timeout(limit))?
    }

    /// Closes and waits for the server to finish the close handshake, which
    /// it does only after the session has left its room.
    pub async fn close(mut self, limit: Duration) -> Result<Vec<String>, ClientError> {
        self.ws.close(None).await?;
        let mut trailing = Vec::new();
        let drain = async {
            while let Some(frame) = next_text(&mut self.ws).await? {
                trailing.push(frame);
            }
            Ok::<_, ClientError>(())
        };
        tokio::time::timeout(limit, drain)
            .await
            .map_err(|_| ClientError::Timeout(limit))??;
        Ok(trailing)
    }

    pub fn split(self) -> (WsSender, WsReceiver) {
        let (sink, stream) = self.ws.split();
        (WsSender { sink }, WsReceiver { stream })
    }
}

pub struct WsSender {
    sink: SplitSink<Ws, Message>,
}

impl WsSender {
    pub async fn send(&mut self, msg: &ClientMessage) -> Result<(), ClientError> {
        self.sink.send(Message::text(encode(msg))).await?;
        Ok(())
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.sink.close().await?;
        Ok(())
    }
}

pub struct WsReceiver {
    stream: SplitStream<Ws>,
}

impl WsReceiver {
    pub async fn recv(&mut self) -> Result<Option<String>, ClientError> {
        next_text(&mut self.stream).await
    }
}
