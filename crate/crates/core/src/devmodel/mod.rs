//! Devices, the location mode, system time and the system configuration
//! format.

mod config;
mod state;

pub use config::{load_config, load_config_with, AppInstance, DeviceDecl, SystemConfig};
pub use state::{
    actuator_state_update, sensor_state_update, AppModel, AttrModel, CascadeLog, Delivery, DeviceModel, Event, Model,
    HandlerModel, LogEntry, Notification, Scheduled, SystemState, LOCATION_DEVICE,
};
