use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::time::Duration;

use super::{
    decode_response, decode_telemetry, encode_command, CommandMessage, LinkError, ResponseMessage,
    TelemetryMessage, MAX_DATAGRAM,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(500);

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

fn local_for(server: &SocketAddr) -> SocketAddr {
    match server {
        SocketAddr::V4(a) if a.ip().is_loopback() => SocketAddr::from(([127, 0, 0, 1], 0)),
        SocketAddr::V4(_) => SocketAddr::from(([0, 0, 0, 0], 0)),
        SocketAddr::V6(_) => SocketAddr::from(([0u16; 8], 0)),
    }
}

/// Command session with a link server. Each `send` transmits once and
/// waits for one reply; nothing is retried.
#[derive(Debug)]
pub struct LinkClient {
    socket: UdpSocket,
    timeout: Duration,
}

impl LinkClient {
    pub fn connect(server: SocketAddr, timeout: Duration) -> Result<Self, LinkError> {
        let socket = UdpSocket::bind(local_for(&server))?;
        socket.connect(server)?;
        socket.set_read_timeout(Some(timeout))?;
        Ok(Self { socket, timeout })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Drop replies that arrived after an earlier send had timed out.
    fn drain(&self) -> std::io::Result<()> {
        self.socket.set_nonblocking(true)?;
        let mut buf = [0u8; MAX_DATAGRAM + 1];
        while self.socket.recv(&mut buf).is_ok() {}
        self.socket.set_nonblocking(false)
    }

    pub fn send(&self, m: &CommandMessage) -> Result<ResponseMessage, LinkError> {
        self.drain()?;
        self.socket.send(encode_command(m).as_bytes())?;
        let mut buf = [0u8; MAX_DATAGRAM + 1];
        match self.socket.recv(&mut buf) {
            Ok(n) => Ok(decode_response(&buf[..n])?),
            Err(e) if is_timeout(&e) => Err(LinkError::Timeout(self.timeout)),
            // an unreachable port surfaces as ConnectionRefused on loopback
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => {
                std::thread::sleep(self.timeout);
                Err(LinkError::Timeout(self.timeout))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// [`LinkClient::send`], treating an `error` reply as a failure.
    pub fn send_ok(&self, m: &CommandMessage) -> Result<(), LinkError> {
        match self.send(m)? {
            ResponseMessage::Ok => Ok(()),
            ResponseMessage::Error(reason) => Err(LinkError::Rejected {
                command: encode_command(m),
                reason,
            }),
        }
    }
}

/// Socket collecting telemetry datagrams.
#[derive(Debug)]
pub struct TelemetryReceiver {
    socket: UdpSocket,
}

impl TelemetryReceiver {
    pub fn bind(addr: SocketAddr) -> Result<Self, LinkError> {
        Ok(Self {
            socket: UdpSocket::bind(addr)?,
        })
    }

    pub fn port(&self) -> std::io::Result<u16> {
        Ok(self.socket.local_addr()?.port())
    }

    /// Next telemetry datagram; malformed datagrams are an error.
    pub fn recv(&self, timeout: Duration) -> Result<TelemetryMessage, LinkError> {
        self.socket.set_read_timeout(Some(timeout))?;
        let mut buf = [0u8; MAX_DATAGRAM + 1];
        match self.socket.recv(&mut buf) {
            Ok(n) => Ok(decode_telemetry(&buf[..n])?),
            Err(e) if is_timeout(&e) => Err(LinkError::Timeout(timeout)),
            Err(e) => Err(e.into()),
        }
    }

    /// Newest well-formed datagram already queued, without waiting.
    pub fn try_latest(&self) -> Result<Option<TelemetryMessage>, LinkError> {
        let mut newest = None;
        self.socket.set_nonblocking(true)?;
        let mut buf = [0u8; MAX_DATAGRAM + 1];
        while let Ok(n) = self.socket.recv(&mut buf) {
            if let Ok(m) = decode_telemetry(&buf[..n]) {
                newest = Some(m);
            }
        }
        self.socket.set_nonblocking(false)?;
        Ok(newest)
    }

    /// Newest datagram already queued, or wait up to `timeout` for one.
    pub fn latest(&self, timeout: Duration) -> Result<TelemetryMessage, LinkError> {
        match self.try_latest()? {
            Some(m) => Ok(m),
            None => self.recv(timeout),
        }
    }
}
