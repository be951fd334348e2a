use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{
    decode_command, encode_response, encode_telemetry, rc_to_velocity, CommandMessage,
    ResponseMessage, TelemetryMessage, MAX_DATAGRAM,
};
use crate::vehicle::{DroneState, PlantParams, VelocityCommand};

pub const DEFAULT_COMMAND_PORT: u16 = 8889;
pub const DEFAULT_TELEMETRY_PORT: u16 = 8890;

const POLL: Duration = Duration::from_millis(20);

/// State shared between the simulation loop and the link server.
///
/// The command is a single-slot mailbox: every accepted `rc` overwrites it
/// and the simulation reads whatever is there when it steps.
#[derive(Debug)]
pub struct SharedPlant {
    params: PlantParams,
    command: Mutex<VelocityCommand>,
    snapshot: Mutex<DroneState>,
    sdk_mode: AtomicBool,
    airborne: AtomicBool,
}

impl SharedPlant {
    pub fn new(initial: DroneState, params: PlantParams) -> Arc<Self> {
        Arc::new(Self {
            params,
            command: Mutex::new(VelocityCommand::hover()),
            snapshot: Mutex::new(initial),
            sdk_mode: AtomicBool::new(false),
            airborne: AtomicBool::new(false),
        })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn command(&self) -> VelocityCommand {
        *self.command.lock().expect("mailbox lock")
    }

    pub fn set_command(&self, cmd: VelocityCommand) {
        *self.command.lock().expect("mailbox lock") = cmd;
    }

    /// Publish the latest plant state for telemetry.
    pub fn publish(&self, s: DroneState) {
        *self.snapshot.lock().expect("snapshot lock") = s;
    }

    pub fn snapshot(&self) -> DroneState {
        *self.snapshot.lock().expect("snapshot lock")
    }

    pub fn in_sdk_mode(&self) -> bool {
        self.sdk_mode.load(Ordering::SeqCst)
    }

    pub fn is_airborne(&self) -> bool {
        self.airborne.load(Ordering::SeqCst)
    }

    /// Apply one decoded command; the reply the server sends back.
    pub fn apply(&self, m: &CommandMessage) -> ResponseMessage {
        if *m == CommandMessage::EnterSdk {
            self.sdk_mode.store(true, Ordering::SeqCst);
            return ResponseMessage::Ok;
        }
        if !self.in_sdk_mode() {
            return ResponseMessage::Error("not in sdk mode".into());
        }
        match *m {
            CommandMessage::Takeoff => {
                self.airborne.store(true, Ordering::SeqCst);
                self.set_command(VelocityCommand::hover());
            }
            CommandMessage::Land => {
                self.airborne.store(false, Ordering::SeqCst);
                self.set_command(VelocityCommand::hover());
            }
            CommandMessage::Rc(a, b, c, d) => self.set_command(rc_to_velocity(a, b, c, d, &self.params)),
            CommandMessage::EnterSdk => unreachable!(),
        }
        ResponseMessage::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Telemetry goes to this port on the last command sender's host.
    pub telemetry_port: u16,
    pub telemetry_hz: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_COMMAND_PORT)),
            telemetry_port: DEFAULT_TELEMETRY_PORT,
            telemetry_hz: 10.0,
        }
    }
}

/// Running protocol server: one thread answering commands, one emitting
/// telemetry. Stops on [`LinkServer::shutdown`] or drop.
pub struct LinkServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl LinkServer {
    pub fn start(cfg: ServerConfig, plant: Arc<SharedPlant>) -> std::io::Result<Self> {
        let socket = UdpSocket::bind(cfg.bind)?;
        socket.set_read_timeout(Some(POLL))?;
        let local_addr = socket.local_addr()?;
        let telemetry_socket = UdpSocket::bind(SocketAddr::new(cfg.bind.ip(), 0))?;
        let stop = Arc::new(AtomicBool::new(false));
        let last_sender: Arc<Mutex<Option<SocketAddr>>> = Arc::new(Mutex::new(None));

        let command_thread = {
            let stop = Arc::clone(&stop);
            let plant = Arc::clone(&plant);
            let last_sender = Arc::clone(&last_sender);
            std::thread::Builder::new()
                .name("link-commands".into())
                .spawn(move || serve_commands(socket, plant, last_sender, stop))?
        };

        let period = Duration::from_secs_f64(1.0 / cfg.telemetry_hz.max(1e-3));
        let telemetry_thread = {
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name("link-telemetry".into())
                .spawn(move || {
                    let mut next = Instant::now() + period;
                    while !stop.load(Ordering::SeqCst) {
                        let now = Instant::now();
                        if now < next {
                            std::thread::sleep((next - now).min(POLL));
                            continue;
                        }
                        next += period;
                        let target = *last_sender.lock().expect("sender lock");
                        if let Some(addr) = target {
                            let msg = encode_telemetry(&TelemetryMessage::from_state(&plant.snapshot()));
                            let _ = telemetry_socket
                                .send_to(msg.as_bytes(), SocketAddr::new(addr.ip(), cfg.telemetry_port));
                        }
                    }
                })?
        };

        Ok(Self {
            local_addr,
            stop,
            threads: vec![command_thread, telemetry_thread],
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for LinkServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn serve_commands(
    socket: UdpSocket,
    plant: Arc<SharedPlant>,
    last_sender: Arc<Mutex<Option<SocketAddr>>>,
    stop: Arc<AtomicBool>,
) {
    let mut buf = [0u8; MAX_DATAGRAM + 1];
    while !stop.load(Ordering::SeqCst) {
        let (n, src) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            // e.g. ICMP port-unreachable echoed back on some platforms
            Err(_) => continue,
        };
        *last_sender.lock().expect("sender lock") = Some(src);
        let reply = match decode_command(&buf[..n]) {
            Ok(m) => plant.apply(&m),
            Err(e) => ResponseMessage::Error(e.reason().into()),
        };
        let _ = socket.send_to(encode_response(&reply).as_bytes(), src);
    }
}
