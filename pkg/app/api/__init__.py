# Package marker for API routers