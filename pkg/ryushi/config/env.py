from contextvars import ContextVar

DEBUG: ContextVar[bool] = ContextVar("ryushi.config.DEBUG", default=False)
