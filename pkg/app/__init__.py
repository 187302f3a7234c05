# Sensor Planning Service application package
