//! Message transports between workers and the coordinator.
//!
//! A transport runs a set of worker tasks concurrently and delivers each
//! task's [`EigenspaceMessage`] to the coordinator, or delivers one basis from
//! the coordinator to `m` receivers. [`InProcess`] hands values over a
//! channel; [`Tcp`] serializes every message with the [`wire`](super::wire)
//! format over loopback or real sockets.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::wire::{read_frame, write_frame, Frame, MessageType};
use super::EigenspaceMessage;
use crate::error::{Error, Result};
use crate::matrix::OrthonormalBasis;

/// Work executed on one machine, producing its uplink message.
pub struct WorkerTask<'a> {
    pub machine_id: u32,
    pub run: Box<dyn FnOnce() -> Result<EigenspaceMessage> + Send + 'a>,
}

impl<'a> WorkerTask<'a> {
    pub fn new(machine_id: u32, run: impl FnOnce() -> Result<EigenspaceMessage> + Send + 'a) -> Self {
        Self {
            machine_id,
            run: Box::new(run),
        }
    }
}

pub trait Transport: Send + Sync {
    fn name(&self) -> &'static str;

    /// Runs every task and returns the messages received by the coordinator,
    /// in arrival order. Fails on the first worker error (lowest machine id
    /// wins when several fail) or on any delivery failure.
    fn gather(&self, tasks: Vec<WorkerTask<'_>>) -> Result<Vec<EigenspaceMessage>>;

    /// Delivers `basis` to `m` receivers and returns what each one decoded,
    /// tagged with the destination id `1..=m`.
    fn broadcast(&self, basis: &OrthonormalBasis, m: usize) -> Result<Vec<EigenspaceMessage>>;
}

fn first_worker_error(mut failures: Vec<(u32, Error)>) -> Option<Error> {
    failures.sort_by_key(|(id, _)| *id);
    failures.into_iter().next().map(|(machine_id, e)| match e {
        e @ (Error::Worker { .. } | Error::Protocol { .. }) => e,
        other => Error::Worker {
            machine_id,
            source: Box::new(other),
        },
    })
}

/// Workers run on the rayon pool; messages move by ownership over a channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct InProcess;

impl Transport for InProcess {
    fn name(&self) -> &'static str {
        "inproc"
    }

    fn gather(&self, tasks: Vec<WorkerTask<'_>>) -> Result<Vec<EigenspaceMessage>> {
        let m = tasks.len();
        let (tx, rx) = mpsc::channel();
        rayon::scope(|s| {
            for task in tasks {
                let tx = tx.clone();
                s.spawn(move |_| {
                    let id = task.machine_id;
                    let _ = tx.send((id, (task.run)()));
                });
            }
        });
        drop(tx);
        let mut msgs = Vec::with_capacity(m);
        let mut failures = Vec::new();
        for (id, r) in rx {
            match r {
                Ok(msg) => msgs.push(msg),
                Err(e) => failures.push((id, e)),
            }
        }
        if let Some(e) = first_worker_error(failures) {
            return Err(e);
        }
        Ok(msgs)
    }

    fn broadcast(&self, basis: &OrthonormalBasis, m: usize) -> Result<Vec<EigenspaceMessage>> {
        let (tx, rx) = mpsc::channel();
        for id in 1..=m as u32 {
            tx.send(EigenspaceMessage {
                machine_id: id,
                basis: basis.clone(),
            })
            .expect("receiver alive");
        }
        drop(tx);
        Ok(rx.into_iter().collect())
    }
}

/// Socket transport: the coordinator binds `listen`, workers connect to
/// `connect` (or to the bound address when unset). Each message travels as
/// one wire frame on its own connection.
#[derive(Debug, Clone)]
pub struct Tcp {
    pub listen: SocketAddr,
    pub connect: Option<SocketAddr>,
    pub timeout: Duration,
}

impl Tcp {
    pub fn new(listen: SocketAddr, connect: Option<SocketAddr>) -> Self {
        Self {
            listen,
            connect,
            timeout: Duration::from_secs(60),
        }
    }

    /// Loopback on an ephemeral port.
    pub fn loopback() -> Self {
        Self::new(SocketAddr::from(([127, 0, 0, 1], 0)), None)
    }

    fn bind(&self) -> Result<(TcpListener, SocketAddr)> {
        let listener = TcpListener::bind(self.listen).map_err(|e| Error::Protocol {
            machine_id: None,
            reason: format!("cannot listen on {}: {e}", self.listen),
        })?;
        let bound = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        Ok((listener, self.connect.unwrap_or(bound)))
    }

    fn connect_to(&self, target: SocketAddr, machine_id: u32) -> Result<TcpStream> {
        let stream = TcpStream::connect_timeout(&target, self.timeout).map_err(|e| Error::Protocol {
            machine_id: Some(machine_id),
            reason: format!("cannot connect to {target}: {e}"),
        })?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        Ok(stream)
    }

    /// Accepts up to `m` connections, handing each to `handle`. Stops early
    /// once every peer has finished without a pending connection, or when the
    /// timeout expires.
    fn accept_all(
        &self,
        listener: &TcpListener,
        m: usize,
        finished: &AtomicUsize,
        mut handle: impl FnMut(TcpStream) -> Result<()>,
    ) -> Vec<Error> {
        let deadline = Instant::now() + self.timeout;
        let mut accepted = 0;
        let mut errors = Vec::new();
        while accepted < m {
            let all_done = finished.load(Ordering::SeqCst) == m;
            match listener.accept() {
                Ok((stream, _)) => {
                    accepted += 1;
                    let prepared = stream
                        .set_nonblocking(false)
                        .and_then(|_| stream.set_read_timeout(Some(self.timeout)))
                        .and_then(|_| stream.set_write_timeout(Some(self.timeout)));
                    if let Err(e) = prepared.map_err(Error::from).and_then(|_| handle(stream)) {
                        errors.push(e);
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if all_done || Instant::now() > deadline {
                        break;
                    }
                    std::thread::sleep(Duration::from_millis(1));
                }
                Err(e) => {
                    errors.push(e.into());
                    break;
                }
            }
        }
        if accepted < m {
            errors.push(Error::Protocol {
                machine_id: None,
                reason: format!("received {accepted} of {m} connections"),
            });
        }
        errors
    }
}

impl Transport for Tcp {
    fn name(&self) -> &'static str {
        "tcp"
    }

    fn gather(&self, tasks: Vec<WorkerTask<'_>>) -> Result<Vec<EigenspaceMessage>> {
        let m = tasks.len();
        let (listener, target) = self.bind()?;
        let finished = AtomicUsize::new(0);
        let mut msgs = Vec::with_capacity(m);

        let (worker_results, accept_errors) = std::thread::scope(|s| {
            let handles: Vec<_> = tasks
                .into_iter()
                .map(|task| {
                    let finished = &finished;
                    s.spawn(move || {
                        let id = task.machine_id;
                        let outcome = (task.run)().and_then(|msg| {
                            let mut stream = self.connect_to(target, id)?;
                            let frame = Frame {
                                msg_type: MessageType::Uplink,
                                machine_id: msg.machine_id,
                                basis: msg.basis,
                            };
                            write_frame(&mut stream, &frame).map_err(|e| Error::Protocol {
                                machine_id: Some(id),
                                reason: e.to_string(),
                            })
                        });
                        finished.fetch_add(1, Ordering::SeqCst);
                        (id, outcome)
                    })
                })
                .collect();

            let accept_errors = self.accept_all(&listener, m, &finished, |mut stream| {
                let frame = read_frame(&mut stream)?;
                if frame.msg_type != MessageType::Uplink {
                    return Err(Error::Protocol {
                        machine_id: Some(frame.machine_id),
                        reason: "expected an uplink frame".into(),
                    });
                }
                msgs.push(EigenspaceMessage {
                    machine_id: frame.machine_id,
                    basis: frame.basis,
                });
                Ok(())
            });
            let results: Vec<(u32, Result<()>)> = handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect();
            (results, accept_errors)
        });

        let failures: Vec<(u32, Error)> = worker_results
            .into_iter()
            .filter_map(|(id, r)| r.err().map(|e| (id, e)))
            .collect();
        if let Some(e) = first_worker_error(failures) {
            return Err(e);
        }
        if let Some(e) = accept_errors.into_iter().next() {
            return Err(match e {
                e @ Error::Protocol { .. } => e,
                other => Error::Protocol {
                    machine_id: None,
                    reason: other.to_string(),
                },
            });
        }
        Ok(msgs)
    }

    fn broadcast(&self, basis: &OrthonormalBasis, m: usize) -> Result<Vec<EigenspaceMessage>> {
        if m == 0 {
            return Ok(Vec::new());
        }
        let (listener, target) = self.bind()?;
        let finished = AtomicUsize::new(0);
        let mut next_id = 0u32;

        let (received, accept_errors) = std::thread::scope(|s| {
            let handles: Vec<_> = (0..m)
                .map(|_| {
                    let finished = &finished;
                    s.spawn(move || {
                        let r = self.connect_to(target, 0).and_then(|mut stream| read_frame(&mut stream));
                        finished.fetch_add(1, Ordering::SeqCst);
                        r
                    })
                })
                .collect();
            let accept_errors = self.accept_all(&listener, m, &finished, |mut stream| {
                next_id += 1;
                let frame = Frame {
                    msg_type: MessageType::Downlink,
                    machine_id: next_id,
                    basis: basis.clone(),
                };
                write_frame(&mut stream, &frame)
            });
            let received: Vec<Result<Frame>> = handles
                .into_iter()
                .map(|h| h.join().expect("receiver thread panicked"))
                .collect();
            (received, accept_errors)
        });

        if let Some(e) = accept_errors.into_iter().next() {
            return Err(e);
        }
        let mut out = Vec::with_capacity(m);
        for r in received {
            let frame = r?;
            if frame.msg_type != MessageType::Downlink {
                return Err(Error::Protocol {
                    machine_id: Some(frame.machine_id),
                    reason: "expected a downlink frame".into(),
                });
            }
            out.push(EigenspaceMessage {
                machine_id: frame.machine_id,
                basis: frame.basis,
            });
        }
        out.sort_by_key(|msg| msg.machine_id);
        Ok(out)
    }
}
