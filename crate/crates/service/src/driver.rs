//! The single task that owns the [`Controller`].
//!
//! Commands arrive on a bounded queue and are applied between ticks. The
//! tick runs at the scene rate; telemetry goes out on a broadcast channel and
//! the latest [`SystemState`] is published on a watch channel for readers
//! that must not queue behind commands.

use std::time::Duration;

use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};
use tracing::warn;

use crate::controller::{Ack, ApiError, Command, Controller, SystemState};
use crate::telemetry::{subscription, TelemetryEvent, TELEMETRY_BUFFER};

const COMMAND_QUEUE: usize = 64;

struct Request {
    command: Command,
    reply: oneshot::Sender<Result<Ack, ApiError>>,
}

/// Cheap to clone; every HTTP handler holds one.
#[derive(Debug, Clone)]
pub struct ServiceHandle {
    commands: mpsc::Sender<Request>,
    state: watch::Receiver<SystemState>,
    events: broadcast::Sender<TelemetryEvent>,
}

impl ServiceHandle {
    pub async fn call(&self, command: Command) -> Result<Ack, ApiError> {
        let (reply, response) = oneshot::channel();
        self.commands
            .send(Request { command, reply })
            .await
            .map_err(|_| ApiError::Unavailable("driver stopped".into()))?;
        response
            .await
            .map_err(|_| ApiError::Unavailable("driver dropped the request".into()))?
    }

    pub fn state(&self) -> SystemState {
        self.state.borrow().clone()
    }

    /// A telemetry feed that opens with the current state.
    pub fn subscribe(&self) -> impl futures::Stream<Item = TelemetryEvent> + Send + 'static {
        let rx = self.events.subscribe();
        subscription(TelemetryEvent::StateChanged { state: self.state() }, rx)
    }
}

/// Starts the driver task. It runs until every [`ServiceHandle`] is dropped.
pub fn spawn(controller: Controller) -> (ServiceHandle, JoinHandle<()>) {
    let (commands, rx) = mpsc::channel(COMMAND_QUEUE);
    let (state_tx, state) = watch::channel(controller.state());
    let (events, _) = broadcast::channel(TELEMETRY_BUFFER);
    let handle = ServiceHandle {
        commands,
        state,
        events: events.clone(),
    };
    let task = tokio::spawn(run(controller, rx, state_tx, events));
    (handle, task)
}

fn publish(events: &broadcast::Sender<TelemetryEvent>, batch: Vec<TelemetryEvent>) {
    for event in batch {
        // No subscribers is fine.
        let _ = events.send(event);
    }
}

async fn run(
    mut controller: Controller,
    mut rx: mpsc::Receiver<Request>,
    state_tx: watch::Sender<SystemState>,
    events: broadcast::Sender<TelemetryEvent>,
) {
    let period = Duration::from_secs_f64(controller.frame_period());
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut last = Instant::now();
    loop {
        tokio::select! {
            biased;
            request = rx.recv() => {
                let Some(Request { command, reply }) = request else { break };
                let result = controller.apply(command);
                publish(&events, controller.drain_events());
                state_tx.send_replace(controller.state());
                let _ = reply.send(result);
            }
            scheduled = interval.tick() => {
                let now = Instant::now();
                let wall_dt = now.duration_since(last);
                last = now;
                if now.duration_since(scheduled) > period {
                    let text = format!(
                        "clock stall: tick ran {:.1} ms late",
                        now.duration_since(scheduled).as_secs_f64() * 1e3
                    );
                    warn!("{text}");
                    let _ = events.send(TelemetryEvent::warning(text));
                }
                controller.tick(wall_dt.as_secs_f64());
                publish(&events, controller.drain_events());
                state_tx.send_if_modified(|s| {
                    let next = controller.state();
                    let modified = *s != next;
                    *s = next;
                    modified
                });
                let spent = now.elapsed();
                if spent > period {
                    let text = format!("clock stall: tick took {:.1} ms", spent.as_secs_f64() * 1e3);
                    warn!("{text}");
                    let _ = events.send(TelemetryEvent::warning(text));
                }
            }
        }
    }
}
